//! Run configuration: TOML sections layered over named-setting defaults.

use std::path::{Path, PathBuf};

use ascent_core::dataset::{AirspaceFilter, ColumnMap, ExperimentSetting};
use ascent_core::exec::Exec;
use ascent_core::geometry::{CoordinateMode, Point3};
use ascent_core::model::{ModelConfig, OutputMode, SpeedActivation};
use ascent_core::synth::{Maneuver, PatternSpec, SyntheticConfig};
use ascent_core::training::{TrainConfig, WtaDistance};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

pub const RESOLVED_NAME: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Named sampling protocol the `experiment` table starts from.
    pub setting: String,
    pub seed: u64,
    pub out: PathBuf,
    pub experiment: ExperimentSetting,
    pub model: ModelSection,
    pub ablation: Ablation,
    pub train: TrainSection,
    pub data: DataSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub pose_scale: f64,
    pub speed_scale: f64,
    pub speed_activation: SpeedActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub coordinates: Coordinates,
    pub positional_normalization: bool,
    pub angular_normalization: bool,
    pub pose_embeddings: bool,
    pub output: OutputMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub beta_smooth_l1: f64,
    pub regression_weight: f64,
    pub classification_weight: f64,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub selection: WtaDistance,
    pub shard_size: usize,
    pub workers: Exec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Everything into one file.
    None,
    /// Files under a `train` or `test` directory go to that split.
    Directory,
    /// Outer and middle halves of the sorted file list.
    Tartan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSection {
    pub enabled: bool,
    pub ceiling_ft: f64,
    pub runway: [Point3; 2],
    pub radius_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub split: SplitMode,
    pub extension: String,
    /// Seconds per frame index in raw scene files.
    pub frame_dt: f64,
    pub columns: ColumnMap,
    pub filter: FilterSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    pub train_scenarios: usize,
    pub val_scenarios: usize,
    pub test_scenarios: usize,
    /// Window stride for synthetic data; replaces `experiment.stride`.
    pub stride: usize,
    pub randomize: bool,
    pub ambiguity_lead_s: f64,
    pub mix: Vec<(Maneuver, f64)>,
    pub pattern: PatternSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ForecasterKind {
    Ascent,
    ConstantVelocity,
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub forecaster: ForecasterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub nn_normalized: bool,
    pub radius_filter: bool,
    pub per_sample: bool,
    pub chunk_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSection {
    pub batch_sizes: Vec<usize>,
    pub warmup: usize,
    pub trials: usize,
}

pub const DEFAULT_SETTING: &str = "trajair-11s";

impl RunConfig {
    pub fn for_setting(name: &str) -> Result<Self, CliError> {
        let experiment = ExperimentSetting::named(name).ok_or_else(|| {
            CliError::Config(format!(
                "setting: unknown name {name:?}; expected one of {}",
                ExperimentSetting::NAMES.join(", ")
            ))
        })?;
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let synth = SyntheticConfig::default();
        Ok(Self {
            setting: name.to_string(),
            seed: 0,
            out: PathBuf::from("runs/default"),
            experiment,
            model: ModelSection {
                d_model: model.d_model,
                n_blocks: model.n_blocks,
                n_heads: model.n_heads,
                pose_scale: model.pose_scale,
                speed_scale: model.speed_scale,
                speed_activation: model.speed_activation,
            },
            ablation: Ablation {
                coordinates: Coordinates::Local,
                positional_normalization: true,
                angular_normalization: true,
                pose_embeddings: true,
                output: OutputMode::FlightParams,
            },
            train: TrainSection {
                epochs: train.epochs,
                batch_size: train.batch_size,
                lr: train.lr,
                lr_milestones: train.lr_milestones,
                lr_decay: train.lr_decay,
                beta_smooth_l1: train.beta_smooth_l1,
                regression_weight: train.regression_weight,
                classification_weight: train.classification_weight,
                grad_clip: train.grad_clip.unwrap_or(0.0),
                selection: train.selection,
                shard_size: train.shard_size,
                workers: train.exec,
            },
            data: DataSection {
                raw: None,
                train: None,
                val: None,
                test: None,
                split: SplitMode::Directory,
                extension: "txt".into(),
                frame_dt: 1.0,
                columns: ColumnMap::default(),
                filter: FilterSection {
                    enabled: false,
                    ceiling_ft: ascent_core::dataset::DEFAULT_CEILING_FT,
                    runway: PatternSpec::default().runway,
                    radius_km: ascent_core::dataset::DEFAULT_RADIUS_KM,
                },
            },
            synth: SynthSection {
                train_scenarios: synth.n_scenarios,
                val_scenarios: 20,
                test_scenarios: 20,
                stride: synth.setting.stride,
                randomize: synth.randomize,
                ambiguity_lead_s: synth.ambiguity_lead_s,
                mix: synth.mix,
                pattern: synth.base,
            },
            eval: EvalSection {
                forecaster: ForecasterKind::Ascent,
                checkpoint: None,
                nn_normalized: true,
                radius_filter: false,
                per_sample: false,
                chunk_size: 64,
            },
            bench: BenchSection {
                batch_sizes: ascent_core::evaluation::LATENCY_BATCH_SIZES.to_vec(),
                warmup: 5,
                trials: 30,
            },
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            d_model: m.d_model,
            n_blocks: m.n_blocks,
            n_heads: m.n_heads,
            k: self.experiment.k,
            history_len: self.experiment.history_len(),
            future_len: self.experiment.future_len(),
            dt_out: self.experiment.dt_out(),
            pose_scale: m.pose_scale,
            speed_scale: m.speed_scale,
            speed_activation: m.speed_activation,
            output: self.ablation.output,
            coordinates: self.ablation.coordinate_mode(),
            pose_embedding: self.ablation.pose_embeddings,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_milestones: t.lr_milestones.clone(),
            lr_decay: t.lr_decay,
            beta_smooth_l1: t.beta_smooth_l1,
            regression_weight: t.regression_weight,
            classification_weight: t.classification_weight,
            grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
            selection: t.selection,
            seed: self.seed,
            shard_size: t.shard_size,
            exec: t.workers,
        }
    }

    pub fn synthetic_config(&self, n_scenarios: usize, seed_offset: u64) -> SyntheticConfig {
        let s = &self.synth;
        SyntheticConfig {
            base: PatternSpec {
                seed: s.pattern.seed.wrapping_add(seed_offset),
                ..s.pattern.clone()
            },
            n_scenarios,
            mix: s.mix.clone(),
            randomize: s.randomize,
            ambiguity_lead_s: s.ambiguity_lead_s,
            setting: ExperimentSetting {
                stride: s.stride,
                ..self.experiment.clone()
            },
        }
    }

    pub fn airspace_filter(&self) -> Result<AirspaceFilter, CliError> {
        let f = &self.data.filter;
        AirspaceFilter::new(f.ceiling_ft, f.runway, f.radius_km).map_err(|e| CliError::Config(format!("data.filter: {e}")))
    }

    /// `explicit` if set, otherwise `<out>/<name>`.
    pub fn path_or_out(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(name))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path_or_out(&self.eval.checkpoint, "model.ckpt")
    }

    /// Folds contradictory ablation switches into the nearest valid
    /// combination. Returns one message per change.
    pub fn normalize(&mut self) -> Vec<String> {
        let mut notes = Vec::new();
        let a = &mut self.ablation;
        match a.coordinates {
            Coordinates::Global => {
                if a.positional_normalization || a.angular_normalization {
                    notes.push("global coordinates ignore the normalization switches; both set to false".into());
                    a.positional_normalization = false;
                    a.angular_normalization = false;
                }
            }
            Coordinates::Local if !a.positional_normalization && !a.angular_normalization => {
                notes.push("local coordinates without any normalization are global coordinates".into());
                a.coordinates = Coordinates::Global;
            }
            Coordinates::Local if !a.positional_normalization => {
                notes.push(
                    "angular normalization rotates about the latest position; positional normalization enabled".into(),
                );
                a.positional_normalization = true;
            }
            Coordinates::Local => {}
        }
        // Synthetic scenarios follow the run seed.
        self.synth.pattern.seed = self.seed;
        notes
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.experiment
            .validate()
            .map_err(|e| CliError::Config(format!("experiment: {e}")))?;
        self.model_config()
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        if self.synth.stride == 0 {
            return Err(CliError::Config("synth.stride: must be at least 1".into()));
        }
        if !(self.data.frame_dt > 0.0) {
            return Err(CliError::Config("data.frame_dt: must be positive".into()));
        }
        if self.eval.chunk_size == 0 {
            return Err(CliError::Config("eval.chunk_size: must be at least 1".into()));
        }
        if self.bench.trials == 0 || self.bench.batch_sizes.iter().any(|&b| b == 0) {
            return Err(CliError::Config("bench: trials and batch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn write_resolved(&self) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let path = self.out.join(RESOLVED_NAME);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

impl Ablation {
    pub fn coordinate_mode(&self) -> CoordinateMode {
        match self.coordinates {
            Coordinates::Global => CoordinateMode::Global,
            Coordinates::Local => CoordinateMode::Local {
                angular: self.angular_normalization,
            },
        }
    }
}

/// Command-line values applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub setting: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub ablations: Vec<AblationFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum AblationFlag {
    Global,
    NoPositional,
    NoAngular,
    NoPoseEmbeddings,
    DirectXyz,
    LinearSpeed,
}

impl AblationFlag {
    fn apply(self, c: &mut RunConfig) {
        let a = &mut c.ablation;
        match self {
            AblationFlag::Global => {
                a.coordinates = Coordinates::Global;
                a.positional_normalization = false;
                a.angular_normalization = false;
            }
            AblationFlag::NoPositional => a.positional_normalization = false,
            AblationFlag::NoAngular => a.angular_normalization = false,
            AblationFlag::NoPoseEmbeddings => a.pose_embeddings = false,
            AblationFlag::DirectXyz => a.output = OutputMode::DirectXyz,
            AblationFlag::LinearSpeed => c.model.speed_activation = SpeedActivation::Linear,
        }
    }
}

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn leaf_keys(t: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(inner) => leaf_keys(inner, &key, out),
            _ => out.push(key),
        }
    }
}

fn has_key(t: &Table, key: &str) -> bool {
    let mut cur = t;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        match cur.get(*p) {
            Some(Value::Table(inner)) if i + 1 < parts.len() => cur = inner,
            Some(_) if i + 1 == parts.len() => return true,
            _ => return false,
        }
    }
    false
}

/// Builds a config from optional TOML text and command-line overrides.
pub fn resolve(text: Option<&str>, ov: &Overrides) -> Result<(RunConfig, Vec<String>), CliError> {
    let user: Table = match text {
        Some(t) => toml::from_str(t).map_err(|e| CliError::Config(e.to_string()))?,
        None => Table::new(),
    };
    let name = match (&ov.setting, user.get("setting")) {
        (Some(s), _) => s.clone(),
        (None, Some(Value::String(s))) => s.clone(),
        (None, Some(_)) => return Err(CliError::Config("setting: expected a string".into())),
        (None, None) => DEFAULT_SETTING.to_string(),
    };
    let base = RunConfig::for_setting(&name)?;
    let mut merged: Table = toml::from_str(&base.to_toml()).expect("round trip of defaults");
    merge(&mut merged, &user);
    merged.insert("setting".into(), Value::String(name));
    let mut cfg: RunConfig =
        toml::from_str(&toml::to_string(&merged).expect("table")).map_err(|e| CliError::Config(e.to_string()))?;

    let known: Table = toml::from_str(&cfg.to_toml()).expect("round trip");
    let mut keys = Vec::new();
    leaf_keys(&user, "", &mut keys);
    if let Some(bad) = keys.iter().find(|k| !has_key(&known, k)) {
        return Err(CliError::Config(format!("{bad}: unknown key")));
    }

    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.out = out.clone();
    }
    for f in &ov.ablations {
        f.apply(&mut cfg);
    }
    let notes = cfg.normalize();
    cfg.validate()?;
    Ok((cfg, notes))
}

pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<(RunConfig, Vec<String>), CliError> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    resolve(text.as_deref(), ov)
}

const KEY_DOCS: &[(&str, &str)] = &[
    ("setting", "Named sampling protocol: trajair-11s, atp-16s or goodflight-40s."),
    ("seed", "Seed for model init, batch order, synthetic scenarios and benchmark inputs."),
    ("out", "Output directory for all artifacts."),
    ("experiment.history_seconds", "History length, s."),
    ("experiment.history_rate", "History sampling rate, Hz."),
    ("experiment.future_seconds", "Forecast horizon, s."),
    ("experiment.future_rate", "Future sampling rate, Hz."),
    ("experiment.k", "Number of predicted modes."),
    ("experiment.base_rate", "Sampling rate of the source trajectories, Hz."),
    ("experiment.history_steps", "Optional explicit history point count."),
    ("experiment.stride", "Base steps between window starts."),
    ("model.d_model", "Embedding width D."),
    ("model.n_blocks", "Self-attention encoder blocks."),
    ("model.n_heads", "Attention heads; must divide D."),
    ("model.pose_scale", "Divisor on pose positions before embedding, km."),
    ("model.speed_scale", "Multiplier on the activated speed output, km/s."),
    ("model.speed_activation", "softplus or linear."),
    ("ablation.coordinates", "local or global."),
    ("ablation.positional_normalization", "Translate to the latest position."),
    ("ablation.angular_normalization", "Cancel yaw and pitch of the latest segment."),
    ("ablation.pose_embeddings", "Add the pose embedding to the mode queries."),
    ("ablation.output", "flight_params or direct_xyz."),
    ("train.epochs", "Training epochs."),
    ("train.batch_size", "Samples per optimizer step."),
    ("train.lr", "Initial Adam learning rate."),
    ("train.lr_milestones", "Epochs at which the learning rate is multiplied by lr_decay."),
    ("train.lr_decay", "Learning-rate factor per milestone."),
    ("train.beta_smooth_l1", "Smooth-L1 transition point, km."),
    ("train.regression_weight", "Weight of the winner regression loss."),
    ("train.classification_weight", "Weight of the mode cross-entropy."),
    ("train.grad_clip", "Global gradient-norm ceiling; 0 disables."),
    ("train.selection", "Winner distance: ade or fde."),
    ("train.shard_size", "Samples per gradient shard."),
    ("train.workers", "parallel or sequential; ASCENT_THREADS caps the pool."),
    ("data.raw", "Directory of raw scene files for preprocess."),
    ("data.train", "Canonical training set; default <out>/train.ascd."),
    ("data.val", "Canonical validation set; default <out>/val.ascd when present."),
    ("data.test", "Canonical test set; default <out>/test.ascd."),
    ("data.split", "Preprocess split: none, directory or tartan."),
    ("data.extension", "Raw scene file extension."),
    ("data.frame_dt", "Seconds per frame index in raw files."),
    ("data.columns.frame", "Column of the frame index."),
    ("data.columns.agent", "Column of the agent id."),
    ("data.columns.x", "Column of x, km."),
    ("data.columns.y", "Column of y, km."),
    ("data.columns.z", "Column of z, km."),
    ("data.filter.enabled", "Apply the airspace filter during preprocess."),
    ("data.filter.ceiling_ft", "Altitude ceiling, ft."),
    ("data.filter.runway", "Runway endpoints, km."),
    ("data.filter.radius_km", "Horizontal radius around the runway endpoints, km."),
    ("synth.train_scenarios", "Synthetic training flights."),
    ("synth.val_scenarios", "Synthetic validation flights."),
    ("synth.test_scenarios", "Synthetic test flights."),
    ("synth.stride", "Window stride for synthetic data."),
    ("synth.randomize", "Redraw pattern direction, leg lengths and speed per flight."),
    ("synth.ambiguity_lead_s", "Histories ending this close before a branch point are ambiguous, s."),
    ("synth.mix", "Maneuver proportions; must sum to 1."),
    ("synth.pattern.runway", "Runway endpoints, departure threshold first, km."),
    ("synth.pattern.pattern_altitude", "Pattern height above the runway, km."),
    ("synth.pattern.leg_lengths", "Upwind, crosswind, downwind, base and final, km."),
    ("synth.pattern.cruise_speed", "Airspeed, km/s."),
    ("synth.pattern.turn_rate", "Turn rate, rad/s."),
    ("synth.pattern.direction", "left or right traffic."),
    ("synth.pattern.noise_sigma", "Per-coordinate position noise, km."),
    ("synth.pattern.seed", "Overwritten by the top-level seed."),
    ("synth.pattern.departure_length", "Straight distance after the upwind end on departures, km."),
    ("synth.pattern.go_around_fraction", "Fraction of final flown before the go-around decision."),
    ("synth.pattern.hold_seconds", "Time stopped after the landing roll, s."),
    ("eval.forecaster", "ascent, constant_velocity or nearest_neighbor."),
    ("eval.checkpoint", "Model checkpoint; default <out>/model.ckpt."),
    ("eval.nn_normalized", "Nearest neighbor matches in the agent-centric frame."),
    ("eval.radius_filter", "Keep only samples inside data.filter.radius_km."),
    ("eval.per_sample", "Include per-sample metrics in report.json."),
    ("eval.chunk_size", "Samples per forecaster call."),
    ("bench.batch_sizes", "Batch sizes timed by bench."),
    ("bench.warmup", "Untimed passes per batch size."),
    ("bench.trials", "Timed passes per batch size."),
];

fn doc_for(key: &str) -> Option<&'static str> {
    KEY_DOCS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
}

/// Markdown page listing every key with its default and meaning.
pub fn reference_page() -> String {
    let cfg = RunConfig::for_setting(DEFAULT_SETTING).expect("default setting exists");
    let table: Table = toml::from_str(&cfg.to_toml()).expect("round trip");
    let mut keys = Vec::new();
    leaf_keys(&table, "", &mut keys);
    for (k, _) in KEY_DOCS {
        if !keys.iter().any(|x| x == k) {
            keys.push(k.to_string());
        }
    }
    let mut s = String::from(
        "# Configuration reference\n\n\
         Generated by `ascent config --reference`. Keys are grouped by TOML section; a config file \
         only needs the keys it changes. Defaults shown are for the trajair-11s setting.\n\n\
         | key | default | meaning |\n|---|---|---|\n",
    );
    for k in keys {
        let default = lookup(&table, &k).map_or_else(|| "unset".to_string(), |v| format!("`{v}`"));
        s.push_str(&format!("| `{k}` | {default} | {} |\n", doc_for(&k).unwrap_or("")));
    }
    s.push_str("\nNamed settings:\n\n");
    for name in ExperimentSetting::NAMES {
        let e = ExperimentSetting::named(name).expect("listed");
        s.push_str(&format!(
            "- `{name}`: {} s at {} Hz in, {} s at {} Hz out, k = {}\n",
            e.history_seconds, e.history_rate, e.future_seconds, e.future_rate, e.k
        ));
    }
    s
}

fn lookup<'a>(t: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.').peekable();
    let mut cur = t;
    while let Some(p) = parts.next() {
        let v = cur.get(p)?;
        if parts.peek().is_none() {
            return Some(v);
        }
        cur = v.as_table()?;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_round_trip() {
        let (cfg, notes) = resolve(None, &Overrides::default()).unwrap();
        assert!(notes.is_empty());
        let (back, _) = resolve(Some(&cfg.to_toml()), &Overrides::default()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn trajair_setting_lengths() {
        let ov = Overrides {
            setting: Some("trajair-11s".into()),
            ..Overrides::default()
        };
        let m = resolve(None, &ov).unwrap().0.model_config();
        assert_eq!((m.history_len, m.future_len, m.k, m.dt_out), (11, 12, 5, 10.0));
        let ov = Overrides {
            setting: Some("goodflight-40s".into()),
            ..Overrides::default()
        };
        assert_eq!(resolve(None, &ov).unwrap().0.model_config().k, 20);
    }

    #[test]
    fn partial_file_overlays_defaults() {
        let (cfg, _) = resolve(Some("seed = 4\n[model]\nd_model = 32\n[experiment]\nstride = 3\n"), &Overrides::default()).unwrap();
        assert_eq!((cfg.seed, cfg.model.d_model, cfg.experiment.stride), (4, 32, 3));
        assert_eq!(cfg.model.n_blocks, 2);
        assert_eq!(cfg.synth.pattern.seed, 4);
        assert_eq!(cfg.train_config().seed, 4);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_named() {
        let e = resolve(Some("[model]\nwidth = 3\n"), &Overrides::default()).unwrap_err();
        assert!(e.to_string().contains("model.width"), "{e}");
        let e = resolve(Some("[model]\nd_model = \"big\"\n"), &Overrides::default()).unwrap_err();
        assert!(e.to_string().contains("d_model"), "{e}");
        let e = resolve(Some("setting = \"nope\"\n"), &Overrides::default()).unwrap_err();
        assert!(e.to_string().contains("setting"), "{e}");
        let e = resolve(Some("[model]\nn_heads = 7\n"), &Overrides::default()).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn ablation_flags_map_to_model_config() {
        let ov = |f: Vec<AblationFlag>| Overrides {
            ablations: f,
            ..Overrides::default()
        };
        let m = resolve(None, &ov(vec![AblationFlag::DirectXyz])).unwrap().0.model_config();
        assert_eq!(m.output, OutputMode::DirectXyz);
        let (c, notes) = resolve(None, &ov(vec![AblationFlag::Global])).unwrap();
        assert_eq!(c.model_config().coordinates, CoordinateMode::Global);
        assert!(notes.is_empty());
        let (_, notes) = resolve(Some("[ablation]\ncoordinates = \"global\"\n"), &Overrides::default()).unwrap();
        assert_eq!(notes.len(), 1);
        let (c, _) = resolve(None, &ov(vec![AblationFlag::NoAngular])).unwrap();
        assert_eq!(c.model_config().coordinates, CoordinateMode::Local { angular: false });
        let (c, notes) = resolve(None, &ov(vec![AblationFlag::NoPositional])).unwrap();
        assert_eq!(c.model_config().coordinates, CoordinateMode::Local { angular: true });
        assert_eq!(notes.len(), 1);
        let (c, _) = resolve(None, &ov(vec![AblationFlag::NoPositional, AblationFlag::NoAngular])).unwrap();
        assert_eq!(c.model_config().coordinates, CoordinateMode::Global);
        let (c, _) = resolve(None, &ov(vec![AblationFlag::NoPoseEmbeddings, AblationFlag::LinearSpeed])).unwrap();
        assert!(!c.model_config().pose_embedding);
        assert_eq!(c.model_config().speed_activation, SpeedActivation::Linear);
    }

    #[test]
    fn every_key_is_documented() {
        let cfg = RunConfig::for_setting(DEFAULT_SETTING).unwrap();
        let table: Table = toml::from_str(&cfg.to_toml()).unwrap();
        let mut keys = Vec::new();
        leaf_keys(&table, "", &mut keys);
        for k in keys {
            assert!(doc_for(&k).is_some(), "{k} undocumented");
        }
    }

    #[test]
    fn checked_in_reference_is_current() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config-reference.md");
        let on_disk = std::fs::read_to_string(path).unwrap_or_default();
        assert_eq!(on_disk, reference_page(), "regenerate with `ascent config --reference`");
    }
}
