//! Flight-parameter rollout and the constant-velocity baseline.
//!
//! Per future step the decoder emits an average speed and absolute yaw and
//! pitch headings in the local frame, each heading as a raw `(sin, cos)`
//! pair. Rollout normalizes each pair, forms the unit direction
//! `(cos θ · sin ψ, cos θ · cos ψ, sin θ)` and integrates
//! `p_t = p_{t-1} + speed_t · dt · u_t` from the origin.

use crate::autograd::{AutogradError, Graph, Var};
use crate::geometry::{add, sub, GeometryError, Point3, Trajectory};

/// Guards the `(sin, cos)` normalization against zero-norm pairs.
pub const PAIR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("flight parameter arrays have inconsistent lengths")]
    LengthMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
}

/// Per-step flight parameters of one trajectory candidate.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct FlightParams {
    pub speed: Vec<f64>,
    pub yaw_sin: Vec<f64>,
    pub yaw_cos: Vec<f64>,
    pub pitch_sin: Vec<f64>,
    pub pitch_cos: Vec<f64>,
}

fn unit_pair(s: f64, c: f64) -> (f64, f64) {
    let n = (s * s + c * c + PAIR_EPS * PAIR_EPS).sqrt();
    (s / n, c / n)
}

impl FlightParams {
    /// Constant speed with the given absolute headings per step.
    pub fn from_angles(speed: &[f64], yaw: &[f64], pitch: &[f64]) -> Self {
        Self {
            speed: speed.to_vec(),
            yaw_sin: yaw.iter().map(|a| a.sin()).collect(),
            yaw_cos: yaw.iter().map(|a| a.cos()).collect(),
            pitch_sin: pitch.iter().map(|a| a.sin()).collect(),
            pitch_cos: pitch.iter().map(|a| a.cos()).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.speed.len()
    }

    fn check(&self) -> Result<(), KinematicsError> {
        let n = self.speed.len();
        if [&self.yaw_sin, &self.yaw_cos, &self.pitch_sin, &self.pitch_cos]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(KinematicsError::LengthMismatch);
        }
        Ok(())
    }

    /// Reported yaw per step, in `[-π, π]`.
    pub fn yaw_angles(&self) -> Vec<f64> {
        self.yaw_sin
            .iter()
            .zip(&self.yaw_cos)
            .map(|(&s, &c)| {
                let (s, c) = unit_pair(s, c);
                s.atan2(c)
            })
            .collect()
    }

    /// Reported pitch per step, in `[-π, π]`.
    pub fn pitch_angles(&self) -> Vec<f64> {
        self.pitch_sin
            .iter()
            .zip(&self.pitch_cos)
            .map(|(&s, &c)| {
                let (s, c) = unit_pair(s, c);
                s.atan2(c)
            })
            .collect()
    }
}

/// Integrates flight parameters into local-frame positions.
pub fn rollout(params: &FlightParams, dt: f64) -> Result<Vec<Point3>, KinematicsError> {
    if !(dt > 0.0) {
        return Err(KinematicsError::NonPositiveDt(dt));
    }
    params.check()?;
    let mut p = [0.0; 3];
    let mut out = Vec::with_capacity(params.steps());
    for t in 0..params.steps() {
        let (sy, cy) = unit_pair(params.yaw_sin[t], params.yaw_cos[t]);
        let (sp, cp) = unit_pair(params.pitch_sin[t], params.pitch_cos[t]);
        let step = params.speed[t] * dt;
        p = add(p, [step * cp * sy, step * cp * cy, step * sp]);
        out.push(p);
    }
    Ok(out)
}

/// Column indices `[0, 2, 4, …]` and `[1, 3, 5, …]` of interleaved pairs.
pub fn pair_columns(steps: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..steps).map(|t| 2 * t).collect(), (0..steps).map(|t| 2 * t + 1).collect())
}

fn unit_pair_graph(
    g: &mut Graph,
    pairs: Var,
    steps: usize,
) -> Result<(Var, Var), KinematicsError> {
    let (sin_idx, cos_idx) = pair_columns(steps);
    let s = g.gather_last(pairs, &sin_idx)?;
    let c = g.gather_last(pairs, &cos_idx)?;
    let s2 = g.square(s);
    let c2 = g.square(c);
    let sum = g.add(s2, c2)?;
    let guarded = g.add_scalar(sum, PAIR_EPS * PAIR_EPS);
    let n = g.sqrt(guarded);
    Ok((g.div(s, n)?, g.div(c, n)?))
}

/// Differentiable batched rollout.
///
/// `speed` is `[M × T]`; `yaw` and `pitch` are `[M × 2T]` holding interleaved
/// `(sin, cos)` pairs. Returns local positions `[M × T × 3]`.
pub fn rollout_graph(
    g: &mut Graph,
    speed: Var,
    yaw: Var,
    pitch: Var,
    dt: f64,
) -> Result<Var, KinematicsError> {
    if !(dt > 0.0) {
        return Err(KinematicsError::NonPositiveDt(dt));
    }
    let steps = g.value(speed).last_dim();
    let (sy, cy) = unit_pair_graph(g, yaw, steps)?;
    let (sp, cp) = unit_pair_graph(g, pitch, steps)?;
    let step = g.scale(speed, dt);
    let horizontal = g.mul(step, cp)?;
    let dx = g.mul(horizontal, sy)?;
    let dy = g.mul(horizontal, cy)?;
    let dz = g.mul(step, sp)?;
    let x = g.cumsum_last(dx);
    let y = g.cumsum_last(dy);
    let z = g.cumsum_last(dz);
    Ok(g.stack_last(&[x, y, z])?)
}

/// Linear extrapolation of the final history displacement.
///
/// Emits `steps` positions spaced `dt_out` seconds apart, starting one
/// interval after the last history sample.
pub fn constant_velocity_forecast(
    history: &Trajectory,
    steps: usize,
    dt_out: f64,
) -> Result<Vec<Point3>, KinematicsError> {
    if history.len() < 2 {
        return Err(GeometryError::InsufficientHistory {
            needed: 2,
            got: history.len(),
        }
        .into());
    }
    if !(dt_out > 0.0) {
        return Err(KinematicsError::NonPositiveDt(dt_out));
    }
    let dt_hist = history.dt().expect("at least two samples");
    let pts = history.points();
    let d = sub(pts[pts.len() - 1], pts[pts.len() - 2]);
    let last = history.last();
    Ok((1..=steps)
        .map(|i| {
            let s = i as f64 * dt_out / dt_hist;
            [last[0] + d[0] * s, last[1] + d[1] * s, last[2] + d[2] * s]
        })
        .collect())
}
