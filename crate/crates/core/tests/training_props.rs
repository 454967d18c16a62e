mod common;

use ascent_core::dataset::Sample;
use ascent_core::exec::Exec;
use ascent_core::model::{Ascent, ModelConfig};
use ascent_core::training::{
    batch_gradient, clip_global_norm, global_norm, shard_gradient, train, wta_select, TrainConfig, TrainOutputs,
    Trainer, WtaDistance,
};
use rand::Rng;

fn tiny(k: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_blocks: 1,
        n_heads: 2,
        k,
        history_len: 4,
        future_len: 3,
        ..ModelConfig::default()
    }
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut r = common::rng(seed);
    (0..n).map(|_| common::random_sample(&mut r, 4, 3)).collect()
}

#[test]
fn wta_matches_brute_force_on_1000_instances() {
    let mut r = common::rng(21);
    for i in 0..1000 {
        let k = r.gen_range(1..8);
        let t = r.gen_range(1..14);
        let mut pt = || [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-1.0..1.0)];
        let gt: Vec<[f64; 3]> = (0..t).map(|_| pt()).collect();
        let mut modes: Vec<Vec<[f64; 3]>> = (0..k).map(|_| (0..t).map(|_| pt()).collect()).collect();
        if i % 10 == 0 && k > 1 {
            modes[k - 1] = modes[0].clone();
        }
        assert_eq!(wta_select(&modes, &gt, WtaDistance::Ade), common::brute_wta(&modes, &gt));
    }
}

#[test]
fn non_winning_modes_receive_no_regression_gradient() {
    let model = Ascent::new(tiny(3), 5).unwrap();
    let cfg = TrainConfig {
        classification_weight: 0.0,
        ..TrainConfig::default()
    };
    let q = model.params().index_of("queries").unwrap();
    for s in samples(20, 9) {
        let bg = shard_gradient(&model, &[&s], &cfg, 1.0).unwrap();
        let w = bg.winners[0];
        for (m, row) in bg.grads[q].chunks(8).enumerate() {
            if m == w {
                assert!(row.iter().any(|g| *g != 0.0));
            } else {
                assert!(row.iter().all(|g| *g == 0.0), "mode {m} got gradient");
            }
        }
    }
}

#[test]
fn uniform_logits_cost_ln_k() {
    let mut model = Ascent::new(tiny(5), 2).unwrap();
    for name in ["score.2.w", "score.2.b"] {
        let i = model.params().index_of(name).unwrap();
        model.params_mut().get_mut(i).data_mut().fill(0.0);
    }
    let s = samples(4, 1);
    let refs: Vec<&Sample> = s.iter().collect();
    let bg = shard_gradient(&model, &refs, &TrainConfig::default(), 1.0).unwrap();
    assert!((bg.classification - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn shards_sum_to_the_full_batch_gradient() {
    let model = Ascent::new(tiny(2), 3).unwrap();
    let s = samples(11, 4);
    let refs: Vec<&Sample> = s.iter().collect();
    let whole = TrainConfig {
        shard_size: 64,
        exec: Exec::Sequential,
        ..TrainConfig::default()
    };
    let full = batch_gradient(&model, &refs, &whole).unwrap();
    let seq = batch_gradient(&model, &refs, &TrainConfig { shard_size: 3, ..whole.clone() }).unwrap();
    let par = batch_gradient(
        &model,
        &refs,
        &TrainConfig {
            shard_size: 3,
            exec: Exec::Parallel,
            ..whole
        },
    )
    .unwrap();
    assert_eq!(seq, par);
    assert_eq!(full.winners, seq.winners);
    assert!((full.loss - seq.loss).abs() < 1e-12);
    let diff: Vec<f64> = full.grads.iter().flatten().zip(seq.grads.iter().flatten()).map(|(a, b)| a - b).collect();
    assert!(diff.iter().map(|d| d * d).sum::<f64>().sqrt() < 1e-12 * (1.0 + global_norm(&full.grads)));
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut g = vec![vec![3.0, 4.0], vec![12.0]];
    assert_eq!(clip_global_norm(&mut g, 5.0), 13.0);
    assert!((global_norm(&g) - 5.0).abs() < 1e-12);
    let mut small = vec![vec![0.1]];
    clip_global_norm(&mut small, 5.0);
    assert_eq!(small, vec![vec![0.1]]);
}

fn run(dir: &std::path::Path, exec: Exec) -> (Vec<u8>, Vec<u8>) {
    let data = samples(24, 8);
    let val = samples(6, 80);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        lr_milestones: vec![2],
        exec,
        seed: 13,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(Ascent::new(tiny(3), 13).unwrap(), cfg).unwrap();
    let out = TrainOutputs { dir: dir.to_path_buf() };
    train(&mut tr, &data, Some(&val), Some(&out)).unwrap();
    (std::fs::read(out.metrics()).unwrap(), std::fs::read(out.checkpoint()).unwrap())
}

#[test]
fn training_is_bit_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let first = run(a.path(), Exec::Sequential);
    assert_eq!(first, run(b.path(), Exec::Sequential));
    assert_eq!(first, run(c.path(), Exec::Parallel));
    assert_eq!(String::from_utf8(first.0).unwrap().lines().count(), 3);
}

#[test]
fn loss_drops_on_a_fixed_batch() {
    let s = samples(6, 30);
    let refs: Vec<&Sample> = s.iter().collect();
    let mut tr = Trainer::new(Ascent::new(tiny(2), 0).unwrap(), TrainConfig::default()).unwrap();
    let first = tr.step(&refs, 1e-3).unwrap().loss;
    let mut last = first;
    for _ in 0..100 {
        last = tr.step(&refs, 1e-3).unwrap().loss;
    }
    assert!(last < 0.5 * first, "{first} → {last}");
}
