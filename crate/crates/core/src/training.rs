//! Winner-takes-all training: best-mode selection, smooth-L1 regression on
//! the winning trajectory, cross-entropy on the mode scores, Adam with a
//! step schedule.
//!
//! Each mini-batch is cut into fixed-size shards. Every shard builds its own
//! graph and gradients are summed in shard order, so results do not depend
//! on how many workers ran the shards.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::dataset::Sample;
use crate::evaluation::{evaluate, EvalError, EvalOptions};
use crate::exec::Exec;
use crate::geometry::Point3;
use crate::model::{save_checkpoint, Ascent, ModelError, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:.6e})")]
    NonFinite { epoch: usize, batch: usize, param_norm: f64 },
    #[error("gradient layout does not match parameters")]
    GradientShape,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<crate::autograd::AutogradError> for TrainError {
    fn from(e: crate::autograd::AutogradError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Distance used to pick the winning mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WtaDistance {
    /// Mean per-step L2 distance.
    #[default]
    Ade,
    /// Endpoint L2 distance.
    Fde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by
    /// `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    /// km.
    pub beta_smooth_l1: f64,
    pub regression_weight: f64,
    pub classification_weight: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub selection: WtaDistance,
    pub seed: u64,
    /// Samples per gradient shard.
    pub shard_size: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            lr_milestones: vec![10, 15],
            lr_decay: 0.5,
            beta_smooth_l1: 1.0,
            regression_weight: 1.0,
            classification_weight: 1.0,
            grad_clip: Some(5.0),
            selection: WtaDistance::Ade,
            seed: 0,
            shard_size: 8,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.shard_size == 0 {
            return bad("epochs, batch_size and shard_size must be positive");
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return bad("lr and lr_decay must be positive");
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_milestones must be strictly increasing");
        }
        if self.lr_milestones.iter().any(|&m| m >= self.epochs) {
            return bad("lr_milestones must be below epochs");
        }
        if !(self.beta_smooth_l1 > 0.0) {
            return bad("beta_smooth_l1 must be positive");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_decay.powi(passed as i32)
    }
}

/// Index of the mode closest to `gt`; the lowest index wins ties.
///
/// `modes` holds `k` trajectories of `gt.len()` points.
pub fn wta_select(modes: &[Vec<Point3>], gt: &[Point3], distance: WtaDistance) -> usize {
    let flat: Vec<f64> = modes.iter().flatten().flatten().copied().collect();
    let gt: Vec<f64> = gt.iter().flatten().copied().collect();
    wta_select_flat(&flat, modes.len(), &gt, distance)
}

/// [`wta_select`] on row-major `[k × T × 3]` and `[T × 3]` buffers.
pub fn wta_select_flat(modes: &[f64], k: usize, gt: &[f64], distance: WtaDistance) -> usize {
    let t = gt.len() / 3;
    let step = |m: usize, i: usize| -> f64 {
        let o = (m * t + i) * 3;
        let g = i * 3;
        ((modes[o] - gt[g]).powi(2) + (modes[o + 1] - gt[g + 1]).powi(2) + (modes[o + 2] - gt[g + 2]).powi(2)).sqrt()
    };
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for m in 0..k {
        let cost = match distance {
            WtaDistance::Ade => (0..t).map(|i| step(m, i)).sum::<f64>() / t as f64,
            WtaDistance::Fde => step(m, t - 1),
        };
        if cost < best_cost {
            best_cost = cost;
            best = m;
        }
    }
    best
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<(), TrainError> {
        if grads.len() != params.len() || grads.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return Err(TrainError::GradientShape);
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.get_mut(i).data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                w[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Loss terms and gradients of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub loss: f64,
    pub regression: f64,
    pub classification: f64,
    /// Winning mode per sample, in batch order.
    pub winners: Vec<usize>,
    /// One buffer per parameter tensor, in store order.
    pub grads: Vec<Vec<f64>>,
}

/// Loss and gradients of `samples` with every term scaled by `weight`.
pub fn shard_gradient(model: &Ascent, samples: &[&Sample], cfg: &TrainConfig, weight: f64) -> Result<BatchGrad, TrainError> {
    let histories: Vec<_> = samples.iter().map(|s| &s.history).collect();
    let batch = model.prepare(&histories)?;
    let mc = model.config();
    let (b, k, tf) = (samples.len(), mc.k, mc.future_len);
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, true);
    let out = model.forward(&mut g, &p, &batch)?;

    let mut targets = Vec::with_capacity(b * tf * 3);
    let mut winners = Vec::with_capacity(b);
    let positions = g.value(out.positions).data();
    for (bi, s) in samples.iter().enumerate() {
        if s.future.len() != tf {
            return Err(ModelError::HistoryLength {
                expected: tf,
                got: s.future.len(),
            }
            .into());
        }
        let gt: Vec<f64> = s.future.points().iter().flat_map(|q| batch.frames[bi].to_local(*q)).collect();
        let modes = &positions[bi * k * tf * 3..(bi + 1) * k * tf * 3];
        winners.push(wta_select_flat(modes, k, &gt, cfg.selection));
        targets.extend(gt);
    }
    let rows: Vec<usize> = winners.iter().enumerate().map(|(bi, w)| bi * k + w).collect();
    let flat = g.reshape(out.positions, vec![b * k, tf * 3])?;
    let chosen = g.index_rows(flat, &rows)?;
    let target = g.constant(Tensor::new(vec![b, tf * 3], targets)?);
    let reg = g.smooth_l1(chosen, target, cfg.beta_smooth_l1)?;
    let cls = g.cross_entropy(out.logits, &winners)?;
    let reg_w = g.scale(reg, cfg.regression_weight * weight);
    let cls_w = g.scale(cls, cfg.classification_weight * weight);
    let loss = g.add(reg_w, cls_w)?;
    let (reg_v, cls_v, loss_v) = (g.value(reg).item(), g.value(cls).item(), g.value(loss).item());
    g.backward(loss)?;
    let grads = p
        .iter()
        .zip(model.params().iter())
        .map(|(v, (_, t))| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok(BatchGrad {
        loss: loss_v,
        regression: reg_v * weight,
        classification: cls_v * weight,
        winners,
        grads,
    })
}

/// Mean-over-batch loss and gradients, computed shard by shard.
pub fn batch_gradient(model: &Ascent, samples: &[&Sample], cfg: &TrainConfig) -> Result<BatchGrad, TrainError> {
    let n = samples.len() as f64;
    let shards: Vec<&[&Sample]> = samples.chunks(cfg.shard_size).collect();
    let parts = cfg
        .exec
        .map(&shards, |s| shard_gradient(model, s, cfg, s.len() as f64 / n));
    let mut total: Option<BatchGrad> = None;
    for part in parts {
        let part = part?;
        match &mut total {
            None => total = Some(part),
            Some(t) => {
                t.loss += part.loss;
                t.regression += part.regression;
                t.classification += part.classification;
                t.winners.extend(part.winners);
                for (a, b) in t.grads.iter_mut().zip(&part.grads) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
        }
    }
    total.ok_or(TrainError::EmptyDataset)
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub regression: f64,
    pub classification: f64,
    pub grad_norm: f64,
    pub winners: Vec<usize>,
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Ascent,
    pub adam: Adam,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Ascent, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = Adam::new(model.params());
        Ok(Self { model, adam, config })
    }

    /// One optimizer step on `samples` at learning rate `lr`.
    pub fn step(&mut self, samples: &[&Sample], lr: f64) -> Result<StepStats, TrainError> {
        let mut bg = batch_gradient(&self.model, samples, &self.config)?;
        if !bg.loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch: 0,
                batch: 0,
                param_norm: self.model.params().l2_norm(),
            });
        }
        let grad_norm = match self.config.grad_clip {
            Some(c) => clip_global_norm(&mut bg.grads, c),
            None => global_norm(&bg.grads),
        };
        self.adam.step(self.model.params_mut(), &bg.grads, lr)?;
        Ok(StepStats {
            loss: bg.loss,
            regression: bg.regression,
            classification: bg.classification,
            grad_norm,
            winners: bg.winners,
        })
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_minade: Option<f64>,
    pub val_minfde: Option<f64>,
    pub regression: f64,
    pub classification: f64,
    /// Fraction of training samples won by each mode this epoch.
    pub mode_shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_val_minade: Option<f64>,
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }
    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("model_best.ckpt")
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Trains for `config.epochs` epochs of seeded shuffled mini-batches.
pub fn train(
    trainer: &mut Trainer,
    data: &[Sample],
    val: Option<&[Sample]>,
    outputs: Option<&TrainOutputs>,
) -> Result<TrainReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let cfg = trainer.config.clone();
    let k = trainer.model.config().k;
    let mut log = match outputs {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(io_err(&o.dir))?;
            let path = o.metrics();
            Some((BufWriter::new(File::create(&path).map_err(io_err(&path))?), path))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_val_minade: None,
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut counts = vec![0usize; k];
        let (mut loss_sum, mut reg_sum, mut cls_sum) = (0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let stats = trainer.step(&batch, lr).map_err(|e| match e {
                TrainError::NonFinite { param_norm, .. } => TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    param_norm,
                },
                other => other,
            })?;
            let w = batch.len() as f64;
            loss_sum += stats.loss * w;
            reg_sum += stats.regression * w;
            cls_sum += stats.classification * w;
            for m in stats.winners {
                counts[m] += 1;
            }
        }
        let n = data.len() as f64;
        let (val_minade, val_minfde) = match val {
            Some(v) if !v.is_empty() => {
                let r = evaluate(
                    &trainer.model,
                    v,
                    k,
                    &EvalOptions {
                        exec: cfg.exec,
                        ..EvalOptions::default()
                    },
                )?;
                (Some(r.minade), Some(r.minfde))
            }
            _ => (None, None),
        };
        let entry = EpochLog {
            epoch,
            loss: loss_sum / n,
            lr,
            val_minade,
            val_minfde,
            regression: reg_sum / n,
            classification: cls_sum / n,
            mode_shares: counts.iter().map(|&c| c as f64 / n).collect(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} lr {lr:.2e} val minADE {:?} minFDE {:?}",
            entry.loss,
            entry.val_minade,
            entry.val_minfde
        );
        if let Some(o) = outputs {
            save_checkpoint(&trainer.model, &o.checkpoint())?;
            if let Some(ade) = val_minade {
                if report.best_val_minade.map_or(true, |b| ade < b) {
                    save_checkpoint(&trainer.model, &o.best_checkpoint())?;
                }
            }
        }
        if let Some(ade) = val_minade {
            if report.best_val_minade.map_or(true, |b| ade < b) {
                report.best_val_minade = Some(ade);
            }
        }
        if let Some((w, path)) = &mut log {
            let line = serde_json::to_string(&entry).expect("plain struct");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(io_err(path))?;
        }
        report.epochs.push(entry);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_at_milestones() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(9), 0.001);
        assert_eq!(c.lr_at(10), 0.0005);
        assert_eq!(c.lr_at(15), 0.00025);
        assert_eq!(c.lr_at(19), 0.00025);
    }

    #[test]
    fn config_rejects_bad_milestones() {
        let bad = TrainConfig {
            lr_milestones: vec![15, 10],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let late = TrainConfig {
            lr_milestones: vec![20],
            ..TrainConfig::default()
        };
        assert!(late.validate().is_err());
    }

    #[test]
    fn wta_trivial_cases() {
        let gt = vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(wta_select(&[gt.clone()], &gt, WtaDistance::Ade), 0);
        let off: Vec<Point3> = gt.iter().map(|p| [p[0], p[1] + 1.0, p[2]]).collect();
        assert_eq!(wta_select(&[gt.clone(), off.clone()], &gt, WtaDistance::Ade), 0);
        assert_eq!(wta_select(&[off.clone(), gt.clone()], &gt, WtaDistance::Ade), 1);
        assert_eq!(wta_select(&[off.clone(), off], &gt, WtaDistance::Fde), 0);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut store = ParamStore::new();
        store.push("w", Tensor::vector(vec![0.5]));
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[vec![0.0]], 1e-3).unwrap();
        assert_eq!(store.get(0).data(), &[0.5]);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[vec![1.0]], 1e-3).unwrap();
        assert!((store.get(0).data()[0] - (0.5 - 1e-3)).abs() < 1e-10);
        assert!(adam.step(&mut store, &[vec![1.0, 2.0]], 1e-3).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![vec![3.0, 4.0], vec![0.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
    }
}
