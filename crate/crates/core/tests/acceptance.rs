//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p ascent-core --test acceptance`. Dataset-dependent
//! checks run only when `ASCENT_TRAJAIR_DIR` points at the TrajAir release.
//! The harness is a report: it always exits 0 and ends with a failure count,
//! unless `ASCENT_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use ascent_core::dataset::{read_scene_file, scene_samples, ColumnMap, ExperimentSetting, Sample};
use ascent_core::evaluation::{evaluate, latency_bench, min_ade, min_fde, ConstantVelocity, EvalOptions};
use ascent_core::exec::{init_threads, Exec};
use ascent_core::geometry::{denormalize_points, distance, normalize_history, Trajectory};
use ascent_core::kinematics::{rollout, FlightParams};
use ascent_core::model::{Ascent, ModelConfig};
use ascent_core::synth::{generate_dataset, LabeledSample, SyntheticConfig};
use ascent_core::training::{train, wta_select, TrainConfig, TrainOutputs, TrainReport, Trainer, WtaDistance};
use rand::Rng;

const TRAJAIR_ENV: &str = "ASCENT_TRAJAIR_DIR";
const TRAJAIR_DT_ENV: &str = "ASCENT_TRAJAIR_FRAME_DT";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

struct Harness {
    failures: usize,
}

impl Harness {
    fn run(&mut self, id: u32, name: &str, f: impl FnOnce() -> Verdict) {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                self.failures += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {id:>2} {name}: {detail} [{secs:.1} s]");
    }
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let mut worst_op: f64 = 0.0;
    let mut worst_name = "";
    for (i, (name, inputs, op)) in common::op_suite().iter().enumerate() {
        let e = common::check_op(100, 500 + i as u64, inputs, op.as_ref());
        if e > worst_op {
            worst_op = e;
            worst_name = name;
        }
    }
    let model = common::model_gradcheck(100, 501);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst_op < 1e-4 && model < 1e-4 && secs < 60.0,
        format!("worst op rel err {worst_op:.2e} ({worst_name}), full model {model:.2e} over 100 trials"),
    )
}

fn frame_round_trip() -> Verdict {
    let mut r = common::rng(502);
    let (mut round, mut heading): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let mut p = [r.gen_range(-20.0..20.0), r.gen_range(-20.0..20.0), r.gen_range(0.0..2.0)];
        let mut pts = vec![p];
        for _ in 1..11 {
            p = [p[0] + r.gen_range(-0.06..0.06), p[1] + r.gen_range(-0.06..0.06), p[2] + r.gen_range(-0.01..0.01)];
            pts.push(p);
        }
        let h = Trajectory::uniform(pts, 0.0, 1.0).unwrap();
        let (local, frame) = normalize_history(&h).unwrap();
        for (a, b) in denormalize_points(local.points(), &frame).iter().zip(h.points()) {
            round = round.max(distance(*a, *b));
        }
        let n = local.len();
        let (a, b) = (local.points()[n - 2], local.points()[n - 1]);
        let d = distance(h.points()[n - 2], h.points()[n - 1]);
        heading = heading.max(distance([b[0] - a[0], b[1] - a[1], b[2] - a[2]], [0.0, d, 0.0]));
    }
    verdict(
        round < 1e-9 && heading < 1e-9,
        format!("max round-trip error {round:.1e} km, heading residual {heading:.1e} km"),
    )
}

fn metric_oracle() -> Verdict {
    let mut r = common::rng(503);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let k = r.gen_range(1..21);
        let t = r.gen_range(1..25);
        let mut pt = || [r.gen_range(-8.0..8.0), r.gen_range(-8.0..8.0), r.gen_range(0.0..1.0)];
        let gt: Vec<[f64; 3]> = (0..t).map(|_| pt()).collect();
        let modes: Vec<Vec<[f64; 3]>> = (0..k).map(|_| (0..t).map(|_| pt()).collect()).collect();
        let (a, f) = common::brute_min_ade_fde(&modes, &gt);
        if min_ade(&modes, &gt).unwrap() != a
            || min_fde(&modes, &gt).unwrap() != f
            || wta_select(&modes, &gt, WtaDistance::Ade) != common::brute_wta(&modes, &gt)
        {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches in 1000 instances"))
}

fn rollout_oracle() -> Verdict {
    let mut r = common::rng(504);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (speed, yaw0, rate, pitch) =
            (r.gen_range(0.01..0.08), r.gen_range(-3.1..3.1), r.gen_range(-0.3..0.3), r.gen_range(-0.2..0.2));
        let steps = r.gen_range(1..30);
        let yaw: Vec<f64> = (0..steps).map(|t| yaw0 + rate * t as f64).collect();
        let got = rollout(&FlightParams::from_angles(&vec![speed; steps], &yaw, &vec![pitch; steps]), 10.0).unwrap();
        for (a, b) in got.iter().zip(common::integrate_turn(speed, yaw0, rate, pitch, 10.0, steps)) {
            worst = worst.max(distance(*a, b));
        }
    }
    verdict(worst < 1e-6, format!("max deviation {worst:.1e} km over 1000 rollouts"))
}

fn desk_model(d: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        n_heads: 8,
        ..ModelConfig::default()
    }
}

fn overfit() -> Verdict {
    let cfg = SyntheticConfig {
        n_scenarios: 5,
        ..SyntheticConfig::default()
    };
    let data = generate_dataset(&cfg).unwrap();
    let tc = TrainConfig {
        epochs: 500,
        lr: 1e-3,
        lr_milestones: vec![250, 350, 450],
        ..TrainConfig::default()
    };
    let mut details = Vec::new();
    let mut ok = true;
    for idx in [5usize, 100, 200] {
        let t = Instant::now();
        let s = &data[idx].sample;
        let mut tr = Trainer::new(Ascent::new(desk_model(64), 0).unwrap(), tc.clone()).unwrap();
        for step in 0..500 {
            tr.step(&[s], tc.lr_at(step)).unwrap();
        }
        let pred = tr.model.predict(&[&s.history]).unwrap();
        let fde = min_fde(&pred[0].trajectories, s.future.points()).unwrap();
        let secs = t.elapsed().as_secs_f64();
        ok &= fde < 0.01 && secs < 60.0;
        details.push(format!("sample {idx} ({}): minFDE {fde:.4} km in {secs:.1} s", data[idx].label.name()));
    }
    verdict(ok, details.join("; "))
}

struct Desk {
    report: TrainReport,
    model: Ascent,
    test: Vec<LabeledSample>,
    n_train: usize,
    cv_minfde: f64,
    seconds: f64,
}

fn desk_training() -> Desk {
    let mut cfg = SyntheticConfig {
        n_scenarios: 60,
        ..SyntheticConfig::default()
    };
    cfg.setting.stride = 10;
    let train_set = generate_dataset(&cfg).unwrap();
    cfg.n_scenarios = 20;
    cfg.base.seed = 100_000;
    let test = generate_dataset(&cfg).unwrap();
    let tr_s: Vec<Sample> = train_set.into_iter().map(|l| l.sample).collect();
    let te_s: Vec<Sample> = test.iter().map(|l| l.sample.clone()).collect();
    let cv = evaluate(&ConstantVelocity, &te_s, 5, &EvalOptions::default()).unwrap();
    let t = Instant::now();
    let mut tr = Trainer::new(Ascent::new(desk_model(64), 0).unwrap(), TrainConfig::default()).unwrap();
    let report = train(&mut tr, &tr_s, Some(&te_s), None).unwrap();
    Desk {
        report,
        model: tr.model,
        test,
        n_train: tr_s.len(),
        cv_minfde: cv.minfde,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn beats_baseline(d: &Desk) -> Verdict {
    let n_train = d.n_train;
    let last = d.report.epochs.last().unwrap();
    let fde = last.val_minfde.unwrap();
    let ratio = fde / d.cv_minfde;
    verdict(
        ratio <= 0.5 && d.test.len() >= 500 && n_train >= 2000 && d.seconds < 900.0,
        format!(
            "minFDE5 {fde:.3} km vs constant velocity {:.3} km (ratio {ratio:.2}); {n_train} train / {} test; trained in {:.0} s",
            d.cv_minfde,
            d.test.len(),
            d.seconds
        ),
    )
}

fn multimodality(d: &Desk) -> Verdict {
    let amb: Vec<&LabeledSample> = d.test.iter().filter(|l| l.ambiguous).collect();
    let hs: Vec<&Trajectory> = amb.iter().map(|l| &l.sample.history).collect();
    let preds = d.model.predict(&hs).unwrap();
    let spread_ok = preds
        .iter()
        .filter(|p| {
            let ends: Vec<_> = p.trajectories.iter().map(|t| *t.last().unwrap()).collect();
            (0..ends.len()).any(|i| (0..i).any(|j| distance(ends[i], ends[j]) > 0.5))
        })
        .count();
    let shares = &d.report.epochs.last().unwrap().mode_shares;
    let active = shares.iter().filter(|s| **s > 0.1).count();
    verdict(
        !amb.is_empty() && spread_ok == amb.len() && active >= 2,
        format!(
            "{spread_ok}/{} ambiguous samples have endpoints > 0.5 km apart; {active} modes above 10% share {:?}",
            amb.len(),
            shares.iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn latency() -> Verdict {
    let model = Ascent::new(ModelConfig::default(), 0).unwrap();
    let rows = latency_bench(&model, &[1, 32], 5, 30, 0).unwrap();
    let (b1, b32) = (rows[0].median_ms, rows[1].median_ms);
    verdict(
        b32 < 10.0 * b1,
        format!("median {b1:.2} ms at B=1, {b32:.2} ms at B=32 ({:.1}x)", b32 / b1),
    )
}

fn determinism() -> Verdict {
    let cfg = SyntheticConfig {
        n_scenarios: 6,
        ..SyntheticConfig::default()
    };
    let data: Vec<Sample> = generate_dataset(&cfg).unwrap().into_iter().map(|l| l.sample).collect();
    let (train_set, val) = data.split_at(data.len() - 40);
    let run = |dir: &Path| {
        let tc = TrainConfig {
            epochs: 2,
            lr_milestones: vec![1],
            exec: Exec::Sequential,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(Ascent::new(desk_model(16), 3).unwrap(), tc).unwrap();
        let out = TrainOutputs { dir: dir.to_path_buf() };
        train(&mut tr, train_set, Some(val), Some(&out)).unwrap();
        (std::fs::read(out.metrics()).unwrap(), std::fs::read(out.checkpoint()).unwrap())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = (run(a.path()), run(b.path()));
    verdict(
        first == second,
        format!(
            "two seeded runs: metrics log {} B, checkpoint {} B, identical = {}",
            first.0.len(),
            first.1.len(),
            first == second
        ),
    )
}

fn txt_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.flatten().map(|e| e.path()).filter(|p| p.extension().is_some_and(|e| e == "txt")).collect())
        .unwrap_or_default();
    v.sort();
    v
}

/// Every directory named `test` below `root`, sorted.
fn test_dirs(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                if p.file_name().is_some_and(|n| n == "test") {
                    out.push(p.clone());
                }
                stack.push(p);
            }
        }
    }
    out.sort();
    out
}

fn trajair_cv(root: &Path) -> Verdict {
    let frame_dt: f64 = std::env::var(TRAJAIR_DT_ENV).ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let setting = ExperimentSetting::trajair_11s();
    let mut per_split = Vec::new();
    for dir in test_dirs(root) {
        let mut samples = Vec::new();
        for (i, f) in txt_files(&dir).iter().enumerate() {
            let Ok(scene) = read_scene_file(f, &ColumnMap::default()) else { continue };
            samples.extend(scene_samples(&scene, i as i64, frame_dt, None, &setting).unwrap());
        }
        if samples.is_empty() {
            continue;
        }
        let r = evaluate(&ConstantVelocity, &samples, 5, &EvalOptions::default()).unwrap();
        per_split.push((dir, r.minade, r.minfde, samples.len()));
    }
    if per_split.is_empty() {
        return Verdict::Fail(format!("no test/ directories with scene files under {}", root.display()));
    }
    let n = per_split.len() as f64;
    let ade = per_split.iter().map(|s| s.1).sum::<f64>() / n;
    let fde = per_split.iter().map(|s| s.2).sum::<f64>() / n;
    verdict(
        (ade - 1.86).abs() <= 0.10 && (fde - 4.21).abs() <= 0.10,
        format!("avg over {} splits: minADE5 {ade:.3} km, minFDE5 {fde:.3} km (target 1.86 / 4.21 ± 0.10)", per_split.len()),
    )
}

fn main() {
    init_threads();
    let mut h = Harness { failures: 0 };
    h.run(1, "gradient correctness", gradients);
    h.run(2, "frame round trip", frame_round_trip);
    h.run(3, "metric oracle equivalence", metric_oracle);
    h.run(4, "rollout oracle", rollout_oracle);
    h.run(5, "overfit sanity", overfit);
    let desk = desk_training();
    h.run(6, "beats constant velocity at desk scale", || beats_baseline(&desk));
    h.run(7, "multi-modality on branch points", || multimodality(&desk));
    h.run(8, "batched latency", latency);
    h.run(9, "determinism", determinism);
    match std::env::var_os(TRAJAIR_ENV) {
        Some(root) => h.run(10, "constant velocity on TrajAir 7Days", || trajair_cv(Path::new(&root))),
        None => h.run(10, "constant velocity on TrajAir 7Days", || {
            Verdict::Skip(format!("set {TRAJAIR_ENV} to the TrajAir release to run"))
        }),
    }
    h.run(11, "full-corpus reproduction", || {
        Verdict::Skip("needs the 111-day corpus and long training; not a desk-scale check".into())
    });
    println!("{} criteria failed", h.failures);
    if h.failures > 0 && std::env::var("ASCENT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
