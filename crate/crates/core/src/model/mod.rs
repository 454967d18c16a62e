//! The forecasting network.
//!
//! A history is expressed in its model frame, embedded token by token with a
//! learned time encoding, passed through pre-norm self-attention blocks and
//! max-pooled into a motion feature. The agent's pose is embedded by a small
//! MLP and added. The fused feature is broadcast to `k` modes, each offset by
//! a learned query, and decoded by MLP heads into per-step speed, yaw and
//! pitch (or directly into positions) plus one score per mode.

mod checkpoint;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AutogradError, Graph, Tensor, Var};
use crate::geometry::{frame_of, CoordinateMode, GeometryError, Point3, PoseFrame, Trajectory};
use crate::kinematics::{pair_columns, rollout_graph, FlightParams, KinematicsError};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{AttentionBlock, LayerNorm, Linear, Mlp, ParamStore};

/// Standard deviation of the initial mode queries.
pub const QUERY_INIT_STD: f64 = 0.02;

/// Factor applied to the initial output-layer weights of the flight heads.
pub const OUTPUT_INIT_GAIN: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("history has {got} points, model expects {expected}")]
    HistoryLength { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedActivation {
    #[default]
    Softplus,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Speed, yaw and pitch heads integrated into positions.
    #[default]
    FlightParams,
    /// One head emitting `3·T_f` model-frame coordinates.
    DirectXyz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub k: usize,
    pub history_len: usize,
    pub future_len: usize,
    /// Seconds per future step.
    pub dt_out: f64,
    /// Divisor applied to pose positions before embedding, km.
    pub pose_scale: f64,
    /// Multiplier on the activated speed output, km/s.
    pub speed_scale: f64,
    pub speed_activation: SpeedActivation,
    pub output: OutputMode,
    pub coordinates: CoordinateMode,
    pub pose_embedding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_blocks: 2,
            n_heads: 8,
            k: 5,
            history_len: 11,
            future_len: 12,
            dt_out: 10.0,
            pose_scale: 10.0,
            speed_scale: 0.05,
            speed_activation: SpeedActivation::Softplus,
            output: OutputMode::FlightParams,
            coordinates: CoordinateMode::default(),
            pose_embedding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.history_len < 2 {
            return bad("history_len must be at least 2");
        }
        if self.future_len == 0 {
            return bad("future_len must be at least 1");
        }
        if !(self.dt_out > 0.0) || !(self.pose_scale > 0.0) || !(self.speed_scale > 0.0) {
            return bad("dt_out, pose_scale and speed_scale must be positive");
        }
        Ok(())
    }

    /// Closed-form trainable scalar count.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let tf = self.future_len;
        let linear = |i: usize, o: usize| i * o + o;
        let head = |out: usize| linear(d, 2 * d) + linear(2 * d, 2 * d) + linear(2 * d, out);
        let embed = linear(3, d) + linear(1, d);
        let block = 2 * d + 4 * linear(d, d) + 2 * d + linear(d, 2 * d) + linear(2 * d, d);
        let pose = if self.pose_embedding { linear(7, d) + linear(d, d) } else { 0 };
        let heads = match self.output {
            OutputMode::FlightParams => head(tf) + 2 * head(2 * tf) + head(1),
            OutputMode::DirectXyz => head(3 * tf) + head(1),
        };
        embed + self.n_blocks * block + pose + self.k * d + heads
    }
}

#[derive(Debug, Clone)]
enum Decoder {
    Flight { speed: Mlp, yaw: Mlp, pitch: Mlp },
    Direct { xyz: Mlp },
}

/// Histories of one batch, mapped into their model frames.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    /// `[B·T_h × 3]` model-frame history points.
    pub histories: Tensor,
    /// `[B × 7]` scaled position and heading sin/cos of each agent pose.
    pub pose_inputs: Tensor,
    /// Last history point in the model frame (origin for local modes).
    pub anchors: Vec<Point3>,
    /// Agent pose estimated from each history.
    pub poses: Vec<PoseFrame>,
    /// Frame mapping model coordinates back to the scene.
    pub frames: Vec<PoseFrame>,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[B·k × T_f × 3]` model-frame positions, mode-major within a sample.
    pub positions: Var,
    /// `[B × k]` unnormalized mode scores.
    pub logits: Var,
    /// `(speed [B·k × T_f], yaw [B·k × 2T_f], pitch [B·k × 2T_f])`.
    pub flight: Option<(Var, Var, Var)>,
}

/// Forecast for one history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePrediction {
    /// `k × T_f` scene-frame positions.
    pub trajectories: Vec<Vec<Point3>>,
    /// Softmax of the mode logits.
    pub scores: Vec<f64>,
    /// Same trajectories in the model frame.
    #[serde(skip)]
    pub model_frame: Vec<Vec<Point3>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<FlightParams>>,
}

#[derive(Debug, Clone)]
pub struct Ascent {
    config: ModelConfig,
    params: ParamStore,
    embed: Linear,
    time: Linear,
    blocks: Vec<AttentionBlock>,
    pose: Option<Mlp>,
    queries: usize,
    decoder: Decoder,
    score: Mlp,
}

/// Numerically stable softmax of one row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

impl Ascent {
    /// Freshly initialized model; parameter values depend only on `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let tf = config.future_len;
        let embed = Linear::new(&mut store, &mut rng, "embed", 3, d);
        let time = Linear::new(&mut store, &mut rng, "time", 1, d);
        let blocks = (0..config.n_blocks)
            .map(|i| AttentionBlock::new(&mut store, &mut rng, &format!("block{i}"), d, config.n_heads))
            .collect();
        let pose = config
            .pose_embedding
            .then(|| Mlp::new(&mut store, &mut rng, "pose", &[7, d, d]));
        let queries = params::mode_queries(&mut store, &mut rng, config.k, d, QUERY_INIT_STD);
        let head = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, out: usize| {
            Mlp::new(store, rng, name, &[d, 2 * d, 2 * d, out])
        };
        let decoder = match config.output {
            OutputMode::FlightParams => Decoder::Flight {
                speed: head(&mut store, &mut rng, "speed", tf),
                yaw: head(&mut store, &mut rng, "yaw", 2 * tf),
                pitch: head(&mut store, &mut rng, "pitch", 2 * tf),
            },
            OutputMode::DirectXyz => Decoder::Direct {
                xyz: head(&mut store, &mut rng, "xyz", 3 * tf),
            },
        };
        let score = head(&mut store, &mut rng, "score", 1);
        if let Decoder::Flight { speed, yaw, pitch } = &decoder {
            // Start every mode near level flight straight ahead.
            for mlp in [speed, yaw, pitch] {
                let (w, _) = mlp.last().indices();
                store.get_mut(w).data_mut().iter_mut().for_each(|v| *v *= OUTPUT_INIT_GAIN);
            }
            for mlp in [yaw, pitch] {
                let (_, b) = mlp.last().indices();
                let bias = store.get_mut(b).data_mut();
                for t in 0..tf {
                    bias[2 * t + 1] = 1.0;
                }
            }
        }
        Ok(Self {
            config,
            params: store,
            embed,
            time,
            blocks,
            pose,
            queries,
            decoder,
            score,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Estimates each pose and maps histories into the model frame.
    pub fn prepare(&self, histories: &[&Trajectory]) -> Result<PreparedBatch, ModelError> {
        if histories.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let th = self.config.history_len;
        let s = self.config.pose_scale;
        let mut hist = Vec::with_capacity(histories.len() * th * 3);
        let mut pose_inputs = Vec::with_capacity(histories.len() * 7);
        let mut anchors = Vec::new();
        let mut poses = Vec::new();
        let mut frames = Vec::new();
        for h in histories {
            if h.len() != th {
                return Err(ModelError::HistoryLength {
                    expected: th,
                    got: h.len(),
                });
            }
            let pose = frame_of(h)?;
            let frame = self.config.coordinates.model_frame(&pose);
            for p in h.points() {
                hist.extend(frame.to_local(*p));
            }
            anchors.push(frame.to_local(h.last()));
            let p = pose.position;
            let (sy, cy) = pose.yaw.sin_cos();
            let (sp, cp) = pose.pitch.sin_cos();
            pose_inputs.extend([p[0] / s, p[1] / s, p[2] / s, sy, cy, sp, cp]);
            poses.push(pose);
            frames.push(frame);
        }
        let b = histories.len();
        Ok(PreparedBatch {
            histories: Tensor::new(vec![b * th, 3], hist)?,
            pose_inputs: Tensor::new(vec![b, 7], pose_inputs)?,
            anchors,
            poses,
            frames,
        })
    }

    /// Motion feature `[B × D]` before pose fusion.
    pub fn encode(&self, g: &mut Graph, p: &[Var], batch: &PreparedBatch) -> Result<Var, ModelError> {
        let (b, th, d) = (batch.len(), self.config.history_len, self.config.d_model);
        let h = g.constant(batch.histories.clone());
        let x = self.embed.apply(g, p, h)?;
        let t = g.constant(Tensor::new(
            vec![th, 1],
            (0..th).map(|i| i as f64 / th as f64).collect(),
        )?);
        let te = self.time.apply(g, p, t)?;
        let x = g.reshape(x, vec![b, th, d])?;
        let x = g.add(x, te)?;
        let mut x = g.reshape(x, vec![b * th, d])?;
        for block in &self.blocks {
            x = block.apply(g, p, x, th)?;
        }
        Ok(g.max_pool_groups(x, th)?)
    }

    /// Pose feature `[B × D]`, or `None` when pose embeddings are disabled.
    pub fn embed_pose(&self, g: &mut Graph, p: &[Var], batch: &PreparedBatch) -> Result<Option<Var>, ModelError> {
        match &self.pose {
            Some(mlp) => {
                let x = g.constant(batch.pose_inputs.clone());
                Ok(Some(mlp.apply(g, p, x)?))
            }
            None => Ok(None),
        }
    }

    /// Full forward pass on parameters bound into `g` by [`ParamStore::bind`].
    pub fn forward(&self, g: &mut Graph, p: &[Var], batch: &PreparedBatch) -> Result<ForwardOutput, ModelError> {
        let cfg = &self.config;
        let (b, k, d, tf) = (batch.len(), cfg.k, cfg.d_model, cfg.future_len);
        let mut a = self.encode(g, p, batch)?;
        if let Some(pe) = self.embed_pose(g, p, batch)? {
            a = g.add(a, pe)?;
        }
        let a = g.repeat_rows(a, k)?;
        let a = g.reshape(a, vec![b, k, d])?;
        let a = g.add(a, p[self.queries])?;
        let a = g.reshape(a, vec![b * k, d])?;

        let logits = self.score.apply(g, p, a)?;
        let logits = g.reshape(logits, vec![b, k])?;

        let (positions, flight) = match &self.decoder {
            Decoder::Flight { speed, yaw, pitch } => {
                let raw = speed.apply(g, p, a)?;
                let speed = match cfg.speed_activation {
                    SpeedActivation::Softplus => g.softplus(raw),
                    SpeedActivation::Linear => raw,
                };
                let speed = g.scale(speed, cfg.speed_scale);
                let yaw = yaw.apply(g, p, a)?;
                let pitch_raw = pitch.apply(g, p, a)?;
                // A non-negative cosine keeps the flight-path angle within ±π/2.
                let (sin_idx, cos_idx) = pair_columns(tf);
                let ps = g.gather_last(pitch_raw, &sin_idx)?;
                let pc = g.gather_last(pitch_raw, &cos_idx)?;
                let pc = g.softplus(pc);
                let pitch = g.stack_last(&[ps, pc])?;
                let pitch = g.reshape(pitch, vec![b * k, 2 * tf])?;
                let pos = rollout_graph(g, speed, yaw, pitch, cfg.dt_out)?;
                (pos, Some((speed, yaw, pitch)))
            }
            Decoder::Direct { xyz } => {
                let out = xyz.apply(g, p, a)?;
                (g.reshape(out, vec![b * k, tf, 3])?, None)
            }
        };
        let positions = if cfg.output == OutputMode::FlightParams && cfg.coordinates == CoordinateMode::Global {
            let mut offs = Vec::with_capacity(b * k * tf * 3);
            for anchor in &batch.anchors {
                for _ in 0..k * tf {
                    offs.extend(anchor);
                }
            }
            let offs = g.constant(Tensor::new(vec![b * k, tf, 3], offs)?);
            g.add(positions, offs)?
        } else {
            positions
        };
        Ok(ForwardOutput {
            positions,
            logits,
            flight,
        })
    }

    /// Inference on a batch of histories.
    pub fn predict(&self, histories: &[&Trajectory]) -> Result<Vec<ModePrediction>, ModelError> {
        let batch = self.prepare(histories)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, &batch)?;
        let (k, tf) = (self.config.k, self.config.future_len);
        let pos = g.value(out.positions).data();
        let logits = g.value(out.logits).data();
        let flight = out
            .flight
            .map(|(s, y, pt)| (g.value(s).data(), g.value(y).data(), g.value(pt).data()));
        let mut preds = Vec::with_capacity(batch.len());
        for (bi, frame) in batch.frames.iter().enumerate() {
            let mut local = Vec::with_capacity(k);
            let mut global = Vec::with_capacity(k);
            for m in 0..k {
                let row = bi * k + m;
                let traj: Vec<Point3> = (0..tf)
                    .map(|t| {
                        let o = (row * tf + t) * 3;
                        [pos[o], pos[o + 1], pos[o + 2]]
                    })
                    .collect();
                global.push(traj.iter().map(|q| frame.to_global(*q)).collect());
                local.push(traj);
            }
            let params = flight.map(|(s, y, pt)| {
                (0..k)
                    .map(|m| {
                        let row = bi * k + m;
                        let pairs = |v: &[f64], off: usize| -> Vec<f64> {
                            (0..tf).map(|t| v[row * 2 * tf + 2 * t + off]).collect()
                        };
                        FlightParams {
                            speed: s[row * tf..(row + 1) * tf].to_vec(),
                            yaw_sin: pairs(y, 0),
                            yaw_cos: pairs(y, 1),
                            pitch_sin: pairs(pt, 0),
                            pitch_cos: pairs(pt, 1),
                        }
                    })
                    .collect()
            });
            preds.push(ModePrediction {
                trajectories: global,
                scores: softmax_row(&logits[bi * k..(bi + 1) * k]),
                model_frame: local,
                params,
            });
        }
        Ok(preds)
    }

    /// Overwrites parameters from another store with identical layout.
    pub fn load_params(&mut self, store: ParamStore) -> Result<(), ModelError> {
        if store.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                store.len()
            )));
        }
        for (i, (name, t)) in store.iter().enumerate() {
            if name != self.params.name(i) || t.shape() != self.params.get(i).shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {i} is {name} {:?}, expected {} {:?}",
                    t.shape(),
                    self.params.name(i),
                    self.params.get(i).shape()
                )));
            }
        }
        self.params = store;
        Ok(())
    }
}
