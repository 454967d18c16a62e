//! Synthetic terminal-area traffic built from standard traffic-pattern
//! geometry, with labels for the maneuver that follows each history.
//!
//! A scenario is a chain of flight phases (straight legs with a constant
//! climb gradient, level constant-rate turns, a decelerating ground roll,
//! and a stationary hold) sampled at 1 Hz. Maneuvers that share a prefix
//! split at annotated branch points; windows whose history ends shortly
//! before a branch point are flagged as ambiguous.

use std::f64::consts::FRAC_PI_2;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{window_samples, AirspaceFilter, DatasetError, ExperimentSetting, Sample};
use crate::geometry::{heading_of, sub, GeometryError, Point3, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid pattern spec: {0}")]
    Spec(&'static str),
    #[error("invalid maneuver mix: {0}")]
    Mix(&'static str),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnDirection {
    Left,
    Right,
}

impl TurnDirection {
    /// Sign of the yaw change; yaw grows clockwise seen from above.
    pub fn sign(self) -> f64 {
        match self {
            TurnDirection::Left => -1.0,
            TurnDirection::Right => 1.0,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            TurnDirection::Left => TurnDirection::Right,
            TurnDirection::Right => TurnDirection::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    FullPattern,
    DepartureStraight,
    DepartureTurn,
    GoAround,
    Landing,
}

impl Maneuver {
    pub const ALL: [Maneuver; 5] = [
        Maneuver::FullPattern,
        Maneuver::DepartureStraight,
        Maneuver::DepartureTurn,
        Maneuver::GoAround,
        Maneuver::Landing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Maneuver::FullPattern => "full_pattern",
            Maneuver::DepartureStraight => "departure_straight",
            Maneuver::DepartureTurn => "departure_turn",
            Maneuver::GoAround => "go_around",
            Maneuver::Landing => "landing",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Which maneuvers share the flown prefix up to a branch point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    /// End of the upwind climb: pattern turn, straight-out, or turn-out.
    UpwindEnd,
    /// Decision point on final: land or go around.
    GoAroundPoint,
}

impl BranchKind {
    pub fn family(self) -> &'static [Maneuver] {
        match self {
            BranchKind::UpwindEnd => &[
                Maneuver::FullPattern,
                Maneuver::DepartureStraight,
                Maneuver::DepartureTurn,
            ],
            BranchKind::GoAroundPoint => &[Maneuver::FullPattern, Maneuver::Landing, Maneuver::GoAround],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub time: f64,
    pub kind: BranchKind,
}

/// Time span of one straight flight leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSpan {
    pub name: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    /// Departure threshold first, far end second.
    pub runway: [Point3; 2],
    /// Height above the runway, km.
    pub pattern_altitude: f64,
    /// Upwind, crosswind, downwind, base, final; km.
    pub leg_lengths: [f64; 5],
    /// 3D airspeed, km/s.
    pub cruise_speed: f64,
    /// rad/s.
    pub turn_rate: f64,
    pub direction: TurnDirection,
    /// Per-coordinate Gaussian noise, km.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Straight distance flown after the upwind end when departing, km.
    #[serde(default = "default_departure_length")]
    pub departure_length: f64,
    /// Fraction of the final leg flown before the go-around decision.
    #[serde(default = "default_go_around_fraction")]
    pub go_around_fraction: f64,
    /// Time spent stopped after the landing roll, s.
    #[serde(default = "default_hold_seconds")]
    pub hold_seconds: f64,
}

fn default_departure_length() -> f64 {
    5.0
}

fn default_go_around_fraction() -> f64 {
    0.5
}

fn default_hold_seconds() -> f64 {
    60.0
}

impl Default for PatternSpec {
    fn default() -> Self {
        Self {
            runway: [[-0.4, -0.3, 0.0], [0.4, 0.3, 0.0]],
            pattern_altitude: 0.3,
            leg_lengths: [2.0, 1.5, 4.0, 1.5, 2.0],
            cruise_speed: 0.03,
            turn_rate: 3f64.to_radians(),
            direction: TurnDirection::Left,
            noise_sigma: 0.002,
            seed: 0,
            departure_length: default_departure_length(),
            go_around_fraction: default_go_around_fraction(),
            hold_seconds: default_hold_seconds(),
        }
    }
}

impl PatternSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.leg_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(SynthError::Spec("leg lengths must be positive"));
        }
        if !(self.cruise_speed > 0.0) || !(self.turn_rate > 0.0) {
            return Err(SynthError::Spec("speed and turn rate must be positive"));
        }
        if !(self.pattern_altitude > 0.0) || !(self.departure_length > 0.0) {
            return Err(SynthError::Spec("altitude and departure length must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SynthError::Spec("noise sigma must be non-negative"));
        }
        if !(self.go_around_fraction > 0.0 && self.go_around_fraction < 1.0) {
            return Err(SynthError::Spec("go-around fraction must lie in (0, 1)"));
        }
        if !(self.hold_seconds >= 0.0) {
            return Err(SynthError::Spec("hold time must be non-negative"));
        }
        let d = sub(self.runway[1], self.runway[0]);
        if d[0].hypot(d[1]) <= 0.0 {
            return Err(SynthError::Spec("runway endpoints coincide"));
        }
        Ok(())
    }

    pub fn turn_radius(&self) -> f64 {
        self.cruise_speed / self.turn_rate
    }

    fn runway_heading(&self) -> f64 {
        heading_of(sub(self.runway[1], self.runway[0])).0
    }

    fn runway_length(&self) -> f64 {
        let d = sub(self.runway[1], self.runway[0]);
        d[0].hypot(d[1])
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    /// Horizontal length and altitude change, flown at 3D cruise speed.
    Straight { horizontal: f64, climb: f64 },
    /// Level turn through a signed yaw change.
    Turn { angle: f64 },
    /// Uniform deceleration to rest over a distance.
    Roll { length: f64 },
    Hold { seconds: f64 },
}

#[derive(Debug, Clone, Copy)]
struct State {
    pos: Point3,
    yaw: f64,
}

struct Path {
    speed: f64,
    turn_rate: f64,
    phases: Vec<(f64, State, Phase)>,
    end: State,
    t: f64,
}

impl Path {
    fn new(start: State, speed: f64, turn_rate: f64) -> Self {
        Self {
            speed,
            turn_rate,
            phases: Vec::new(),
            end: start,
            t: 0.0,
        }
    }

    fn duration(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Straight { horizontal, climb } => horizontal.hypot(climb) / self.speed,
            Phase::Turn { angle } => angle.abs() / self.turn_rate,
            Phase::Roll { length } => 2.0 * length / self.speed,
            Phase::Hold { seconds } => seconds,
        }
    }

    fn state_at(&self, s: State, phase: Phase, tau: f64) -> State {
        let v = self.speed;
        match phase {
            Phase::Straight { horizontal, climb } => {
                let len = horizontal.hypot(climb);
                let (h, z) = (v * tau * horizontal / len, v * tau * climb / len);
                State {
                    pos: [
                        s.pos[0] + h * s.yaw.sin(),
                        s.pos[1] + h * s.yaw.cos(),
                        s.pos[2] + z,
                    ],
                    yaw: s.yaw,
                }
            }
            Phase::Turn { angle } => {
                let w = self.turn_rate * angle.signum();
                let yaw = s.yaw + w * tau;
                State {
                    pos: [
                        s.pos[0] + v / w * (s.yaw.cos() - yaw.cos()),
                        s.pos[1] + v / w * (yaw.sin() - s.yaw.sin()),
                        s.pos[2],
                    ],
                    yaw,
                }
            }
            Phase::Roll { length } => {
                let a = v * v / (2.0 * length);
                let d = v * tau - 0.5 * a * tau * tau;
                State {
                    pos: [
                        s.pos[0] + d * s.yaw.sin(),
                        s.pos[1] + d * s.yaw.cos(),
                        s.pos[2],
                    ],
                    yaw: s.yaw,
                }
            }
            Phase::Hold { .. } => s,
        }
    }

    /// Appends a phase and returns its (start, end) time.
    fn push(&mut self, phase: Phase) -> (f64, f64) {
        let d = self.duration(phase);
        let start = self.t;
        let mut end = self.state_at(self.end, phase, d);
        if let Phase::Turn { angle } = phase {
            end.yaw = self.end.yaw + angle;
        }
        self.phases.push((start, self.end, phase));
        self.end = end;
        self.t += d;
        (start, self.t)
    }

    fn sample(&self, t: f64) -> Point3 {
        let idx = self
            .phases
            .iter()
            .rposition(|(start, _, _)| *start <= t)
            .unwrap_or(0);
        let (start, s, phase) = self.phases[idx];
        let tau = (t - start).min(self.duration(phase));
        self.state_at(s, phase, tau).pos
    }
}

/// A generated flight with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub maneuver: Maneuver,
    /// Observed (noisy) trajectory sampled at 1 Hz from t = 0.
    pub trajectory: Trajectory,
    /// Noise-free positions at the same timestamps.
    pub clean: Vec<Point3>,
    pub branch_points: Vec<BranchPoint>,
    pub legs: Vec<LegSpan>,
}

fn straight(path: &mut Path, legs: &mut Vec<LegSpan>, name: &str, horizontal: f64, climb: f64) {
    let (start, end) = path.push(Phase::Straight { horizontal, climb });
    legs.push(LegSpan {
        name: name.into(),
        start,
        end,
    });
}

/// Traces one maneuver for `spec` at 1 Hz.
pub fn generate_scenario(spec: &PatternSpec, maneuver: Maneuver) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let [up, cw, dw, base, fin] = spec.leg_lengths;
    let h = spec.pattern_altitude;
    let side = spec.direction.sign() * FRAC_PI_2;
    let runway_yaw = spec.runway_heading();
    let threshold = spec.runway[0];
    let mut legs = Vec::new();
    let mut branches = Vec::new();

    let start = match maneuver {
        Maneuver::Landing | Maneuver::GoAround => {
            // Begin at the start of the base leg of a pattern whose final
            // ends at the threshold.
            let r = spec.turn_radius();
            let (sy, cy) = runway_yaw.sin_cos();
            let (ps, pc) = (runway_yaw + side).sin_cos();
            let along = -fin - r;
            let across = base + r;
            State {
                pos: [
                    threshold[0] + along * sy + across * ps,
                    threshold[1] + along * cy + across * pc,
                    threshold[2] + h,
                ],
                yaw: runway_yaw + 3.0 * side,
            }
        }
        _ => State {
            pos: threshold,
            yaw: runway_yaw,
        },
    };
    let mut path = Path::new(start, spec.cruise_speed, spec.turn_rate);

    let approach = |path: &mut Path, legs: &mut Vec<LegSpan>, branches: &mut Vec<BranchPoint>, go_around: bool| {
        let before = fin * spec.go_around_fraction;
        let drop = h * spec.go_around_fraction;
        straight(path, legs, "final", before, -drop);
        branches.push(BranchPoint {
            time: path.t,
            kind: BranchKind::GoAroundPoint,
        });
        if go_around {
            let gradient = h / up;
            straight(path, legs, "go_around", spec.departure_length, gradient * spec.departure_length);
        } else {
            straight(path, legs, "final", fin - before, -(h - drop));
            path.push(Phase::Roll {
                length: spec.runway_length(),
            });
            path.push(Phase::Hold {
                seconds: spec.hold_seconds,
            });
        }
    };

    match maneuver {
        Maneuver::FullPattern | Maneuver::DepartureStraight | Maneuver::DepartureTurn => {
            straight(&mut path, &mut legs, "upwind", up, h);
            branches.push(BranchPoint {
                time: path.t,
                kind: BranchKind::UpwindEnd,
            });
            let gradient = h / up;
            match maneuver {
                Maneuver::DepartureStraight => {
                    straight(&mut path, &mut legs, "departure", spec.departure_length, gradient * spec.departure_length);
                }
                Maneuver::DepartureTurn => {
                    path.push(Phase::Turn { angle: -side });
                    straight(&mut path, &mut legs, "departure", spec.departure_length, gradient * spec.departure_length);
                }
                _ => {
                    path.push(Phase::Turn { angle: side });
                    straight(&mut path, &mut legs, "crosswind", cw, 0.0);
                    path.push(Phase::Turn { angle: side });
                    straight(&mut path, &mut legs, "downwind", dw, 0.0);
                    path.push(Phase::Turn { angle: side });
                    straight(&mut path, &mut legs, "base", base, 0.0);
                    path.push(Phase::Turn { angle: side });
                    approach(&mut path, &mut legs, &mut branches, false);
                }
            }
        }
        Maneuver::Landing | Maneuver::GoAround => {
            straight(&mut path, &mut legs, "base", base, 0.0);
            path.push(Phase::Turn { angle: side });
            approach(&mut path, &mut legs, &mut branches, maneuver == Maneuver::GoAround);
        }
    }

    let n = path.t.floor() as usize + 1;
    let clean: Vec<Point3> = (0..n).map(|i| path.sample(i as f64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        clean
            .iter()
            .map(|p| {
                let mut q = *p;
                for c in &mut q {
                    *c += normal.sample(&mut rng);
                }
                q
            })
            .collect()
    } else {
        clean.clone()
    };
    Ok(Scenario {
        maneuver,
        trajectory: Trajectory::uniform(points, 0.0, 1.0)?,
        clean,
        branch_points: branches,
        legs,
    })
}

/// A windowed sample with its generator bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample: Sample,
    pub label: Maneuver,
    pub ambiguous: bool,
}

impl LabeledSample {
    /// Whether every history and future point lies inside `filter`'s radius.
    pub fn within_radius(&self, filter: &AirspaceFilter) -> bool {
        self.sample
            .history
            .points()
            .iter()
            .chain(self.sample.future.points())
            .all(|p| filter.within_radius(*p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub base: PatternSpec,
    pub n_scenarios: usize,
    /// Maneuver proportions; must sum to 1.
    pub mix: Vec<(Maneuver, f64)>,
    /// Redraw pattern direction, leg lengths, and speed per scenario.
    pub randomize: bool,
    /// Histories ending this many seconds or less before a branch point are
    /// ambiguous.
    pub ambiguity_lead_s: f64,
    pub setting: ExperimentSetting,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            base: PatternSpec::default(),
            n_scenarios: 100,
            mix: vec![
                (Maneuver::FullPattern, 0.4),
                (Maneuver::DepartureStraight, 0.15),
                (Maneuver::DepartureTurn, 0.15),
                (Maneuver::Landing, 0.15),
                (Maneuver::GoAround, 0.15),
            ],
            randomize: true,
            ambiguity_lead_s: 10.0,
            setting: ExperimentSetting {
                stride: 5,
                ..ExperimentSetting::trajair_11s()
            },
        }
    }
}

fn validate_mix(mix: &[(Maneuver, f64)]) -> Result<(), SynthError> {
    if mix.is_empty() {
        return Err(SynthError::Mix("empty"));
    }
    if mix.iter().any(|(_, p)| !(*p >= 0.0)) {
        return Err(SynthError::Mix("negative proportion"));
    }
    let total: f64 = mix.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SynthError::Mix("proportions must sum to 1"));
    }
    Ok(())
}

/// Largest-remainder allocation of `n` scenarios, shuffled by `seed`.
pub fn assign_maneuvers(mix: &[(Maneuver, f64)], n: usize, seed: u64) -> Result<Vec<Maneuver>, SynthError> {
    validate_mix(mix)?;
    let exact: Vec<f64> = mix.iter().map(|(_, p)| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    let mut out: Vec<Maneuver> = mix
        .iter()
        .zip(&counts)
        .flat_map(|((m, _), &c)| std::iter::repeat(*m).take(c))
        .collect();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}

/// Per-scenario spec: `seed + index`, optionally with redrawn geometry.
pub fn scenario_spec(base: &PatternSpec, index: usize, randomize: bool) -> PatternSpec {
    let seed = base.seed.wrapping_add(index as u64);
    let mut spec = PatternSpec {
        seed,
        ..base.clone()
    };
    if randomize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_9a77_e4e5);
        spec.direction = if rng.gen_bool(0.5) {
            TurnDirection::Left
        } else {
            TurnDirection::Right
        };
        let up = rng.gen_range(1.5..3.0);
        let cw = rng.gen_range(1.5..3.0);
        let fin = rng.gen_range(1.5..3.0);
        spec.leg_lengths = [up, cw, up + fin, cw, fin];
        spec.cruise_speed = base.cruise_speed * rng.gen_range(0.9..1.1);
    }
    spec
}

/// Generates, windows, and labels `n_scenarios` flights.
pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Vec<LabeledSample>, SynthError> {
    let maneuvers = assign_maneuvers(&cfg.mix, cfg.n_scenarios, cfg.base.seed)?;
    let present: Vec<Maneuver> = cfg.mix.iter().filter(|(_, p)| *p > 0.0).map(|(m, _)| *m).collect();
    let mut out = Vec::new();
    for (i, maneuver) in maneuvers.into_iter().enumerate() {
        let spec = scenario_spec(&cfg.base, i, cfg.randomize);
        let scenario = generate_scenario(&spec, maneuver)?;
        let active: Vec<f64> = scenario
            .branch_points
            .iter()
            .filter(|b| b.kind.family().iter().filter(|m| present.contains(m)).count() >= 2)
            .map(|b| b.time)
            .collect();
        for sample in window_samples(&scenario.trajectory, &cfg.setting, i as i64, 0)? {
            let t = sample.anchor_time();
            let ambiguous = active
                .iter()
                .any(|&b| t <= b + 1e-9 && t >= b - cfg.ambiguity_lead_s - 1e-9);
            out.push(LabeledSample {
                sample,
                label: maneuver,
                ambiguous,
            });
        }
    }
    Ok(out)
}

/// Sidecar label table: one row per sample in dataset order.
pub fn labels_csv(samples: &[LabeledSample]) -> String {
    let mut s = String::from("scene_id,agent_id,anchor_time,maneuver,ambiguous\n");
    for l in samples {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            l.sample.scene_id,
            l.sample.agent_id,
            l.sample.anchor_time(),
            l.label.name(),
            l.ambiguous as u8
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distance;

    fn quiet() -> PatternSpec {
        PatternSpec {
            noise_sigma: 0.0,
            ..PatternSpec::default()
        }
    }

    #[test]
    fn straight_departure_is_collinear() {
        let s = generate_scenario(&quiet(), Maneuver::DepartureStraight).unwrap();
        let p = s.clean.clone();
        let d = sub(p[p.len() - 1], p[0]);
        let n = crate::geometry::norm(d);
        for q in &p {
            let v = sub(*q, p[0]);
            let cross = [
                v[1] * d[2] - v[2] * d[1],
                v[2] * d[0] - v[0] * d[2],
                v[0] * d[1] - v[1] * d[0],
            ];
            assert!(crate::geometry::norm(cross) / n < 1e-9);
        }
    }

    #[test]
    fn straight_legs_fly_at_cruise_speed() {
        let spec = quiet();
        let s = generate_scenario(&spec, Maneuver::FullPattern).unwrap();
        let mut checked = 0;
        for leg in &s.legs {
            let (a, b) = (leg.start.ceil() as usize, leg.end.floor() as usize);
            for i in a..b {
                let step = distance(s.clean[i], s.clean[i + 1]);
                assert!((step - spec.cruise_speed).abs() < 1e-9, "{} {step}", leg.name);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn full_pattern_lands_on_threshold() {
        let spec = quiet();
        let s = generate_scenario(&spec, Maneuver::FullPattern).unwrap();
        let fin = s.legs.iter().rev().find(|l| l.name == "final").unwrap();
        let touchdown = s.trajectory.points()[fin.end.floor() as usize];
        assert!(distance(touchdown, spec.runway[0]) < spec.cruise_speed + 1e-9);
    }

    #[test]
    fn landing_matches_pattern_tail() {
        let spec = quiet();
        let land = generate_scenario(&spec, Maneuver::Landing).unwrap();
        let full = generate_scenario(&spec, Maneuver::FullPattern).unwrap();
        let a = land.legs.iter().find(|l| l.name == "base").unwrap();
        let b = full.legs.iter().find(|l| l.name == "base").unwrap();
        let pa = land.clean[0];
        let pb = full.clean[b.start.ceil() as usize];
        let shift = b.start.ceil() - b.start;
        assert!(a.start == 0.0);
        assert!(distance(pa, pb) <= spec.cruise_speed * shift + 1e-9);
    }

    #[test]
    fn seeds_are_deterministic() {
        let spec = PatternSpec::default();
        assert_eq!(
            generate_scenario(&spec, Maneuver::GoAround).unwrap(),
            generate_scenario(&spec, Maneuver::GoAround).unwrap()
        );
    }

    #[test]
    fn assignment_is_exact() {
        let mix = [(Maneuver::Landing, 0.3), (Maneuver::GoAround, 0.7)];
        let m = assign_maneuvers(&mix, 10, 1).unwrap();
        assert_eq!(m.iter().filter(|x| **x == Maneuver::Landing).count(), 3);
        assert!(assign_maneuvers(&[(Maneuver::Landing, 0.5)], 3, 0).is_err());
    }
}
