//! Displacement metrics, baselines, dataset evaluation, and the latency
//! harness.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AirspaceFilter, Sample};
use crate::exec::Exec;
use crate::geometry::{distance, frame_of, GeometryError, Point3, Trajectory};
use crate::kinematics::{constant_velocity_forecast, KinematicsError};
use crate::model::{Ascent, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `k` candidate trajectories for one sample, scene frame.
pub type Modes = Vec<Vec<Point3>>;

fn check(pred: &[Vec<Point3>], gt: &[Point3]) -> Result<(), EvalError> {
    if gt.is_empty() {
        return Err(EvalError::Empty("ground truth"));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty("prediction modes"));
    }
    if let Some(m) = pred.iter().find(|m| m.len() != gt.len()) {
        return Err(EvalError::Shape(format!(
            "mode has {} steps, ground truth {}",
            m.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn ade(mode: &[Point3], gt: &[Point3]) -> f64 {
    mode.iter().zip(gt).map(|(a, b)| distance(*a, *b)).sum::<f64>() / gt.len() as f64
}

/// Best mode by ADE (lowest index on ties) with its ADE.
pub fn best_ade(pred: &[Vec<Point3>], gt: &[Point3]) -> Result<(usize, f64), EvalError> {
    check(pred, gt)?;
    let mut best = (0, f64::INFINITY);
    for (m, mode) in pred.iter().enumerate() {
        let e = ade(mode, gt);
        if e < best.1 {
            best = (m, e);
        }
    }
    Ok(best)
}

/// Minimum over modes of the mean per-step distance, km.
pub fn min_ade(pred: &[Vec<Point3>], gt: &[Point3]) -> Result<f64, EvalError> {
    Ok(best_ade(pred, gt)?.1)
}

/// Minimum over modes of the endpoint distance, km.
pub fn min_fde(pred: &[Vec<Point3>], gt: &[Point3]) -> Result<f64, EvalError> {
    check(pred, gt)?;
    let last = gt.len() - 1;
    Ok(pred
        .iter()
        .map(|m| distance(m[last], gt[last]))
        .fold(f64::INFINITY, f64::min))
}

/// Pads a shorter mode list to `k` by repeating it.
pub fn replicate(pred: Modes, k: usize) -> Modes {
    if pred.is_empty() || pred.len() >= k {
        return pred;
    }
    (0..k).map(|i| pred[i % pred.len()].clone()).collect()
}

/// Anything that maps histories to candidate futures.
pub trait Forecaster: Sync {
    fn name(&self) -> &str;
    fn forecast(&self, samples: &[&Sample]) -> Result<Vec<Modes>, EvalError>;
}

impl Forecaster for Ascent {
    fn name(&self) -> &str {
        "ascent"
    }

    fn forecast(&self, samples: &[&Sample]) -> Result<Vec<Modes>, EvalError> {
        let h: Vec<&Trajectory> = samples.iter().map(|s| &s.history).collect();
        Ok(self.predict(&h)?.into_iter().map(|p| p.trajectories).collect())
    }
}

/// Extrapolates the final history displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantVelocity;

impl Forecaster for ConstantVelocity {
    fn name(&self) -> &str {
        "constant_velocity"
    }

    fn forecast(&self, samples: &[&Sample]) -> Result<Vec<Modes>, EvalError> {
        samples
            .iter()
            .map(|s| {
                let dt = 1.0 / s.future_rate;
                Ok(vec![constant_velocity_forecast(&s.history, s.future.len(), dt)?])
            })
            .collect()
    }
}

/// Returns the recorded future.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthOracle;

impl Forecaster for GroundTruthOracle {
    fn name(&self) -> &str {
        "ground_truth"
    }

    fn forecast(&self, samples: &[&Sample]) -> Result<Vec<Modes>, EvalError> {
        Ok(samples.iter().map(|s| vec![s.future.points().to_vec()]).collect())
    }
}

/// Retrieves the training future whose history best matches the query.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestNeighbor {
    /// Compare histories in their agent-centric frames (default) or raw.
    pub normalized: bool,
    bank: Vec<(Vec<Point3>, Vec<Point3>)>,
}

impl NearestNeighbor {
    pub fn new(train: &[Sample], normalized: bool) -> Result<Self, EvalError> {
        if train.is_empty() {
            return Err(EvalError::Empty("nearest-neighbor bank"));
        }
        let bank = train
            .iter()
            .map(|s| {
                if normalized {
                    let f = frame_of(&s.history)?;
                    Ok((
                        s.history.points().iter().map(|p| f.to_local(*p)).collect(),
                        s.future.points().iter().map(|p| f.to_local(*p)).collect(),
                    ))
                } else {
                    Ok((s.history.points().to_vec(), s.future.points().to_vec()))
                }
            })
            .collect::<Result<_, EvalError>>()?;
        Ok(Self { normalized, bank })
    }

    pub fn len(&self) -> usize {
        self.bank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bank.is_empty()
    }

    /// Bank index of the closest history; first entry wins ties.
    pub fn nearest(&self, history: &[Point3]) -> Result<usize, EvalError> {
        let mut best = (0, f64::INFINITY);
        for (i, (h, _)) in self.bank.iter().enumerate() {
            if h.len() != history.len() {
                return Err(EvalError::Shape(format!(
                    "bank history has {} points, query {}",
                    h.len(),
                    history.len()
                )));
            }
            let d = ade(h, history);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }

    pub fn forecast_one(&self, history: &Trajectory) -> Result<Vec<Point3>, EvalError> {
        if self.normalized {
            let f = frame_of(history)?;
            let local: Vec<Point3> = history.points().iter().map(|p| f.to_local(*p)).collect();
            let i = self.nearest(&local)?;
            Ok(self.bank[i].1.iter().map(|p| f.to_global(*p)).collect())
        } else {
            let i = self.nearest(history.points())?;
            Ok(self.bank[i].1.clone())
        }
    }
}

impl Forecaster for NearestNeighbor {
    fn name(&self) -> &str {
        "nearest_neighbor"
    }

    fn forecast(&self, samples: &[&Sample]) -> Result<Vec<Modes>, EvalError> {
        samples.iter().map(|s| Ok(vec![self.forecast_one(&s.history)?])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetric {
    pub sample: usize,
    pub best_mode: usize,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub forecaster: String,
    pub minade: f64,
    pub minfde: f64,
    pub n_samples: usize,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<SampleMetric>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Samples per forecaster call.
    pub chunk_size: usize,
    pub exec: Exec,
    pub per_sample: bool,
    pub setting: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            chunk_size: 64,
            exec: Exec::Parallel,
            per_sample: false,
            setting: None,
        }
    }
}

/// Order-independent mean: sorting first fixes the summation order.
fn stable_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average minADE/minFDE of `forecaster` over `samples`; forecasts with
/// fewer than `k` modes are replicated up to `k`.
pub fn evaluate(
    forecaster: &dyn Forecaster,
    samples: &[Sample],
    k: usize,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty("evaluation set"));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let chunks: Vec<&[&Sample]> = refs.chunks(opts.chunk_size.max(1)).collect();
    let results = opts.exec.map(&chunks, |chunk| -> Result<Vec<(usize, f64, f64)>, EvalError> {
        let preds = forecaster.forecast(chunk)?;
        if preds.len() != chunk.len() {
            return Err(EvalError::Shape("forecaster returned wrong batch size".into()));
        }
        preds
            .into_iter()
            .zip(chunk.iter())
            .map(|(p, s)| {
                let p = replicate(p, k);
                let gt = s.future.points();
                let (m, a) = best_ade(&p, gt)?;
                Ok((m, a, min_fde(&p, gt)?))
            })
            .collect()
    });
    let mut metrics = Vec::with_capacity(samples.len());
    for r in results {
        metrics.extend(r?);
    }
    let per_sample = opts.per_sample.then(|| {
        metrics
            .iter()
            .enumerate()
            .map(|(i, &(m, a, f))| SampleMetric {
                sample: i,
                best_mode: m,
                ade: a,
                fde: f,
            })
            .collect()
    });
    Ok(EvalReport {
        forecaster: forecaster.name().to_string(),
        minade: stable_mean(metrics.iter().map(|m| m.1).collect()),
        minfde: stable_mean(metrics.iter().map(|m| m.2).collect()),
        n_samples: samples.len(),
        k,
        setting: opts.setting.clone(),
        per_sample,
    })
}

/// Evaluation on a foreign dataset, optionally dropping samples whose
/// history or future leaves `radius`. Returns the report and the number of
/// samples kept.
pub fn cross_dataset_eval(
    forecaster: &dyn Forecaster,
    samples: &[Sample],
    k: usize,
    radius: Option<&AirspaceFilter>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    match radius {
        None => evaluate(forecaster, samples, k, opts),
        Some(f) => {
            let kept: Vec<Sample> = samples
                .iter()
                .filter(|s| {
                    s.history
                        .points()
                        .iter()
                        .chain(s.future.points())
                        .all(|p| f.within_radius(*p))
                })
                .cloned()
                .collect();
            evaluate(forecaster, &kept, k, opts)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub batch_size: usize,
    pub median_ms: f64,
    pub p90_ms: f64,
}

pub const LATENCY_BATCH_SIZES: [usize; 5] = [1, 4, 8, 16, 32];

/// Straight noisy histories with random placement and heading.
pub fn random_histories(n: usize, len: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let start = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(0.1..1.0)];
            let yaw: f64 = rng.gen_range(-3.1..3.1);
            let speed = rng.gen_range(0.02..0.05);
            let pts = (0..len)
                .map(|i| {
                    let s = speed * i as f64;
                    [
                        start[0] + s * yaw.sin() + rng.gen_range(-1e-3..1e-3),
                        start[1] + s * yaw.cos() + rng.gen_range(-1e-3..1e-3),
                        start[2] + rng.gen_range(-1e-3..1e-3),
                    ]
                })
                .collect();
            Trajectory::uniform(pts, 0.0, 1.0).expect("finite")
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Median and 90th-percentile wall time of single-threaded batched
/// forward passes on random histories.
pub fn latency_bench(
    model: &Ascent,
    batch_sizes: &[usize],
    n_warmup: usize,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<LatencyRow>, EvalError> {
    if n_trials == 0 {
        return Err(EvalError::Empty("latency trials"));
    }
    let th = model.config().history_len;
    batch_sizes
        .iter()
        .map(|&b| {
            let hist = random_histories(b, th, seed ^ b as u64);
            let refs: Vec<&Trajectory> = hist.iter().collect();
            for _ in 0..n_warmup {
                model.predict(&refs)?;
            }
            let mut times = Vec::with_capacity(n_trials);
            for _ in 0..n_trials {
                let t = Instant::now();
                std::hint::black_box(model.predict(&refs)?);
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            times.sort_by(f64::total_cmp);
            Ok(LatencyRow {
                batch_size: b,
                median_ms: percentile(&times, 0.5),
                p90_ms: percentile(&times, 0.9),
            })
        })
        .collect()
}

pub fn latency_csv(rows: &[LatencyRow]) -> String {
    let mut s = String::from("batch_size,median_ms,p90_ms\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.batch_size, r.median_ms, r.p90_ms));
    }
    s
}
