use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ascent_core::dataset::{
    make_tartan_splits, read_canonical_dataset, read_scene_file, scene_samples, write_canonical_dataset, DatasetError,
    Sample,
};
use ascent_core::evaluation::{
    cross_dataset_eval, latency_bench, latency_csv, ConstantVelocity, EvalOptions, Forecaster, NearestNeighbor,
};
use ascent_core::geometry::{Point3, Trajectory};
use ascent_core::model::{load_checkpoint, Ascent, ModelConfig};
use ascent_core::synth::{generate_dataset, labels_csv};
use ascent_core::training::{train, Trainer, TrainOutputs};
use serde::Serialize;
use walkdir::WalkDir;

use crate::config::{ForecasterKind, RunConfig, SplitMode};
use crate::error::CliError;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_set(path: &Path) -> Result<Vec<Sample>, CliError> {
    let data = read_canonical_dataset(path)?;
    if data.is_empty() {
        return Err(CliError::Data(format!("{} holds no samples", path.display())));
    }
    Ok(data)
}

fn check_shapes(data: &[Sample], mc: &ModelConfig, path: &Path) -> Result<(), CliError> {
    for (i, s) in data.iter().enumerate() {
        if s.history.len() != mc.history_len || s.future.len() != mc.future_len {
            return Err(CliError::Data(format!(
                "{}: sample {i} has {} history and {} future points; the setting expects {} and {}",
                path.display(),
                s.history.len(),
                s.future.len(),
                mc.history_len,
                mc.future_len
            )));
        }
    }
    Ok(())
}

fn load_model(path: &Path, expected: &ModelConfig) -> Result<Ascent, CliError> {
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        let got = serde_json::to_value(model.config()).expect("plain struct");
        let want = serde_json::to_value(expected).expect("plain struct");
        let fields: Vec<String> = want
            .as_object()
            .expect("struct")
            .iter()
            .filter(|(k, v)| got.get(k.as_str()) != Some(v))
            .map(|(k, v)| format!("{k} (checkpoint {}, config {v})", got[k.as_str()]))
            .collect();
        return Err(CliError::Config(format!(
            "{} was trained with a different model config: {}",
            path.display(),
            fields.join(", ")
        )));
    }
    Ok(model)
}

fn group_by_directory(raw: &Path, per_file: Vec<(PathBuf, Vec<Sample>)>) -> BTreeMap<String, Vec<Sample>> {
    let mut out: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for (path, samples) in per_file {
        let rel = path.strip_prefix(raw).unwrap_or(&path);
        let split = rel
            .components()
            .filter_map(|c| c.as_os_str().to_str())
            .find(|c| matches!(*c, "train" | "val" | "test"));
        match split {
            Some(s) => out.entry(s.to_string()).or_default().extend(samples),
            None => log::warn!("{} is not under a train, val or test directory; skipped", path.display()),
        }
    }
    out
}

pub fn preprocess(cfg: &RunConfig) -> Result<(), CliError> {
    let raw = cfg
        .data
        .raw
        .as_ref()
        .ok_or_else(|| CliError::Config("data.raw: not set; pass --raw DIR".into()))?;
    if !raw.is_dir() {
        return Err(CliError::Data(format!("{} is not a directory", raw.display())));
    }
    let files: Vec<PathBuf> = WalkDir::new(raw)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().and_then(|x| x.to_str()) == Some(cfg.data.extension.as_str()))
        .collect();
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no .{} files under {}",
            cfg.data.extension,
            raw.display()
        )));
    }
    let filter = if cfg.data.filter.enabled {
        Some(cfg.airspace_filter()?)
    } else {
        None
    };
    let mut per_file = Vec::new();
    let mut index = String::from("scene_id,path,samples,skipped_rows\n");
    for (i, f) in files.iter().enumerate() {
        let scene = match read_scene_file(f, &cfg.data.columns) {
            Ok(s) => s,
            Err(DatasetError::EmptyScene(p)) => {
                log::warn!("{} has no valid rows; skipped", p.display());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let samples = scene_samples(&scene, i as i64, cfg.data.frame_dt, filter.as_ref(), &cfg.experiment)?;
        index.push_str(&format!("{i},{},{},{}\n", f.display(), samples.len(), scene.skipped_rows));
        per_file.push((f.clone(), samples));
    }
    let groups = match cfg.data.split {
        SplitMode::None => BTreeMap::from([("samples".to_string(), per_file.into_iter().flat_map(|(_, s)| s).collect())]),
        SplitMode::Directory => group_by_directory(raw, per_file),
        SplitMode::Tartan => {
            let ids: Vec<usize> = (0..per_file.len()).collect();
            let (s1, s2) = make_tartan_splits(&ids)?;
            let take = |ids: &[usize]| ids.iter().flat_map(|&i| per_file[i].1.iter().cloned()).collect::<Vec<_>>();
            BTreeMap::from([("s1".to_string(), take(&s1)), ("s2".to_string(), take(&s2))])
        }
    };
    if groups.values().all(Vec::is_empty) {
        return Err(CliError::Data("no windows survived preprocessing".into()));
    }
    for (name, samples) in &groups {
        let path = cfg.out.join(format!("{name}.ascd"));
        write_canonical_dataset(samples, &path)?;
        println!("{name}: {} samples -> {}", samples.len(), path.display());
    }
    write_file(&cfg.out.join("scenes.csv"), index)
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let splits = [
        ("train", cfg.synth.train_scenarios, 0),
        ("val", cfg.synth.val_scenarios, 1_000_000),
        ("test", cfg.synth.test_scenarios, 2_000_000),
    ];
    for (name, n, offset) in splits {
        if n == 0 {
            continue;
        }
        let labeled = generate_dataset(&cfg.synthetic_config(n, offset))?;
        let samples: Vec<Sample> = labeled.iter().map(|l| l.sample.clone()).collect();
        let path = cfg.out.join(format!("{name}.ascd"));
        write_canonical_dataset(&samples, &path)?;
        write_file(&cfg.out.join(format!("{name}_labels.csv")), labels_csv(&labeled))?;
        let ambiguous = labeled.iter().filter(|l| l.ambiguous).count();
        println!(
            "{name}: {n} flights, {} samples ({ambiguous} ambiguous) -> {}",
            samples.len(),
            path.display()
        );
    }
    Ok(())
}

fn validation_set(cfg: &RunConfig) -> Result<Option<Vec<Sample>>, CliError> {
    match &cfg.data.val {
        Some(p) => read_set(p).map(Some),
        None => {
            let p = cfg.out.join("val.ascd");
            if p.exists() {
                read_set(&p).map(Some)
            } else {
                Ok(None)
            }
        }
    }
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let mc = cfg.model_config();
    let path = cfg.path_or_out(&cfg.data.train, "train.ascd");
    let data = read_set(&path)?;
    check_shapes(&data, &mc, &path)?;
    let val = validation_set(cfg)?;
    if let Some(v) = &val {
        check_shapes(v, &mc, Path::new("validation set"))?;
    }
    let model = Ascent::new(mc, cfg.seed)?;
    log::info!(
        "training {} parameters on {} samples{}",
        model.params().numel(),
        data.len(),
        val.as_ref().map_or(String::new(), |v| format!(", validating on {}", v.len()))
    );
    let mut trainer = Trainer::new(model, cfg.train_config())?;
    let outputs = TrainOutputs { dir: cfg.out.clone() };
    let report = train(&mut trainer, &data, val.as_deref(), Some(&outputs))?;
    let last = report.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs: loss {:.5}{} -> {}",
        report.epochs.len(),
        last.loss,
        last.val_minfde
            .map_or(String::new(), |f| format!(", val minADE {:.4} km minFDE {f:.4} km", last.val_minade.unwrap_or(f64::NAN))),
        outputs.checkpoint().display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.path_or_out(&cfg.data.test, "test.ascd");
    let test = read_set(&path)?;
    let forecaster: Box<dyn Forecaster> = match cfg.eval.forecaster {
        ForecasterKind::Ascent => {
            let model = load_model(&cfg.checkpoint_path(), &cfg.model_config())?;
            check_shapes(&test, model.config(), &path)?;
            Box::new(model)
        }
        ForecasterKind::ConstantVelocity => Box::new(ConstantVelocity),
        ForecasterKind::NearestNeighbor => {
            let bank = read_set(&cfg.path_or_out(&cfg.data.train, "train.ascd"))?;
            Box::new(NearestNeighbor::new(&bank, cfg.eval.nn_normalized)?)
        }
    };
    let filter = if cfg.eval.radius_filter {
        Some(cfg.airspace_filter()?)
    } else {
        None
    };
    let opts = EvalOptions {
        chunk_size: cfg.eval.chunk_size,
        exec: cfg.train.workers,
        per_sample: cfg.eval.per_sample,
        setting: Some(cfg.setting.clone()),
    };
    let report = cross_dataset_eval(forecaster.as_ref(), &test, cfg.experiment.k, filter.as_ref(), &opts)?;
    if !report.minade.is_finite() || !report.minfde.is_finite() {
        return Err(CliError::Numeric(format!(
            "{} produced non-finite metrics (minADE {}, minFDE {})",
            report.forecaster, report.minade, report.minfde
        )));
    }
    let out = cfg.out.join("report.json");
    write_file(&out, serde_json::to_string_pretty(&report).expect("plain struct"))?;
    println!(
        "{} on {} samples: minADE{k} {:.4} km, minFDE{k} {:.4} km -> {}",
        report.forecaster,
        report.n_samples,
        report.minade,
        report.minfde,
        out.display(),
        k = report.k
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictionRecord {
    scene_id: i64,
    agent_id: i64,
    anchor_time: f64,
    trajectories: Vec<Vec<Point3>>,
    scores: Vec<f64>,
}

pub fn predict(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(&cfg.checkpoint_path(), &cfg.model_config())?;
    let path = cfg.path_or_out(&cfg.data.test, "test.ascd");
    let data = read_set(&path)?;
    check_shapes(&data, model.config(), &path)?;
    let mut records = Vec::with_capacity(data.len());
    for chunk in data.chunks(cfg.eval.chunk_size) {
        let hist: Vec<&Trajectory> = chunk.iter().map(|s| &s.history).collect();
        for (s, p) in chunk.iter().zip(model.predict(&hist)?) {
            let finite = p.scores.iter().chain(p.trajectories.iter().flatten().flatten()).all(|v| v.is_finite());
            if !finite {
                return Err(CliError::Numeric(format!(
                    "non-finite prediction for scene {} agent {} at t = {}",
                    s.scene_id,
                    s.agent_id,
                    s.anchor_time()
                )));
            }
            records.push(PredictionRecord {
                scene_id: s.scene_id,
                agent_id: s.agent_id,
                anchor_time: s.anchor_time(),
                trajectories: p.trajectories,
                scores: p.scores,
            });
        }
    }
    let out = cfg.out.join("predictions.json");
    write_file(&out, serde_json::to_string(&records).expect("plain struct"))?;
    println!("{} predictions -> {}", records.len(), out.display());
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), CliError> {
    let mc = cfg.model_config();
    let model = match &cfg.eval.checkpoint {
        Some(p) => load_model(p, &mc)?,
        None => Ascent::new(mc, cfg.seed)?,
    };
    let b = &cfg.bench;
    let rows = latency_bench(&model, &b.batch_sizes, b.warmup, b.trials, cfg.seed)?;
    let out = cfg.out.join("latency.csv");
    let csv = latency_csv(&rows);
    write_file(&out, &csv)?;
    print!("{csv}");
    Ok(())
}
