mod common;

use ascent_core::dataset::{AirspaceFilter, Sample};
use ascent_core::evaluation::{
    cross_dataset_eval, evaluate, latency_bench, latency_csv, min_ade, min_fde, ConstantVelocity, EvalOptions,
    EvalReport, Forecaster, GroundTruthOracle, NearestNeighbor, LATENCY_BATCH_SIZES,
};
use ascent_core::exec::Exec;
use ascent_core::geometry::{distance, PoseFrame};
use ascent_core::model::{Ascent, ModelConfig};
use rand::seq::SliceRandom;
use rand::Rng;

fn random_modes(r: &mut rand_chacha::ChaCha8Rng, k: usize, t: usize) -> (Vec<Vec<[f64; 3]>>, Vec<[f64; 3]>) {
    let mut pt = || [r.gen_range(-8.0..8.0), r.gen_range(-8.0..8.0), r.gen_range(0.0..1.0)];
    let gt = (0..t).map(|_| pt()).collect();
    let modes = (0..k).map(|_| (0..t).map(|_| pt()).collect()).collect();
    (modes, gt)
}

fn dataset(n: usize, seed: u64) -> Vec<Sample> {
    let mut r = common::rng(seed);
    (0..n).map(|_| common::random_sample(&mut r, 11, 12)).collect()
}

#[test]
fn metrics_equal_naive_loops_on_1000_instances() {
    let mut r = common::rng(31);
    for _ in 0..1000 {
        let k = r.gen_range(1..21);
        let t = r.gen_range(1..25);
        let (modes, gt) = random_modes(&mut r, k, t);
        let (ade, fde) = common::brute_min_ade_fde(&modes, &gt);
        assert_eq!(min_ade(&modes, &gt).unwrap(), ade);
        assert_eq!(min_fde(&modes, &gt).unwrap(), fde);
    }
}

#[test]
fn min_ade_never_grows_with_more_modes() {
    let mut r = common::rng(32);
    for _ in 0..300 {
        let (modes, gt) = random_modes(&mut r, 20, 12);
        let mut prev = f64::INFINITY;
        for k in 1..=20 {
            let (a, f) = (min_ade(&modes[..k], &gt).unwrap(), min_fde(&modes[..k], &gt).unwrap());
            assert!(a <= prev);
            assert!(f <= min_fde(&modes[..k.max(2) - 1], &gt).unwrap());
            prev = a;
        }
    }
}

#[test]
fn constant_velocity_is_exact_on_straight_lines() {
    let mut r = common::rng(33);
    let samples: Vec<Sample> = (0..50)
        .map(|_| {
            let v = [r.gen_range(-0.05..0.05), r.gen_range(-0.05..0.05), r.gen_range(-0.005..0.005)];
            let p0 = [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), 0.5];
            let at = |t: f64| [p0[0] + v[0] * t, p0[1] + v[1] * t, p0[2] + v[2] * t];
            let hist = (0..11).map(|i| at(i as f64)).collect();
            let fut = (1..=12).map(|j| at(10.0 + 10.0 * j as f64)).collect();
            Sample::from_parts(0, 0, 10.0, 1.0, 0.1, hist, fut).unwrap()
        })
        .collect();
    let rep = evaluate(&ConstantVelocity, &samples, 5, &EvalOptions::default()).unwrap();
    assert!(rep.minade < 1e-9 && rep.minfde < 1e-9, "{rep:?}");
}

#[test]
fn evaluation_agrees_with_oracle_and_ignores_order() {
    let data = dataset(300, 34);
    let opts = EvalOptions {
        per_sample: true,
        chunk_size: 7,
        ..EvalOptions::default()
    };
    let rep = evaluate(&ConstantVelocity, &data, 5, &opts).unwrap();
    let preds = ConstantVelocity.forecast(&data.iter().collect::<Vec<_>>()).unwrap();
    for (m, (p, s)) in rep.per_sample.as_ref().unwrap().iter().zip(preds.iter().zip(&data)) {
        let (a, f) = common::brute_min_ade_fde(p, s.future.points());
        assert_eq!((m.ade, m.fde), (a, f));
    }
    let mut shuffled = data.clone();
    shuffled.shuffle(&mut common::rng(1));
    for exec in [Exec::Sequential, Exec::Parallel] {
        let other = evaluate(
            &ConstantVelocity,
            &shuffled,
            5,
            &EvalOptions {
                exec,
                chunk_size: 13,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert_eq!((other.minade, other.minfde), (rep.minade, rep.minfde));
    }
    let zero = evaluate(&GroundTruthOracle, &data, 5, &EvalOptions::default()).unwrap();
    assert_eq!((zero.minade, zero.minfde), (0.0, 0.0));
}

#[test]
fn nearest_neighbor_matches_linear_scan() {
    let bank = dataset(80, 35);
    let queries = dataset(40, 36);
    let nn = NearestNeighbor::new(&bank, false).unwrap();
    for q in &queries {
        let mut best = (0, f64::INFINITY);
        for (i, b) in bank.iter().enumerate() {
            let d: f64 = b
                .history
                .points()
                .iter()
                .zip(q.history.points())
                .map(|(x, y)| distance(*x, *y))
                .sum::<f64>()
                / 11.0;
            if d < best.1 {
                best = (i, d);
            }
        }
        assert_eq!(nn.forecast_one(&q.history).unwrap(), bank[best.0].future.points());
    }
    for b in &bank {
        assert_eq!(nn.forecast_one(&b.history).unwrap(), b.future.points());
    }
}

#[test]
fn normalized_nearest_neighbor_follows_rigid_motion() {
    let bank = dataset(30, 37);
    let nn = NearestNeighbor::new(&bank, true).unwrap();
    let f = PoseFrame {
        position: [4.0, -2.0, 0.0],
        yaw: 1.1,
        pitch: 0.0,
    };
    for b in &bank {
        let moved = b.history.with_points(b.history.points().iter().map(|p| f.to_global(*p)).collect());
        let got = nn.forecast_one(&moved).unwrap();
        for (g, want) in got.iter().zip(b.future.points()) {
            assert!(distance(*g, f.to_global(*want)) < 1e-9);
        }
    }
}

#[test]
fn radius_filter_keeps_only_inside_samples() {
    let data = dataset(200, 38);
    let f = AirspaceFilter::new(6000.0, [[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]], 3.0).unwrap();
    let inside = data
        .iter()
        .filter(|s| s.history.points().iter().chain(s.future.points()).all(|p| f.within_radius(*p)))
        .count();
    assert!(inside > 0 && inside < data.len());
    let rep = cross_dataset_eval(&ConstantVelocity, &data, 5, Some(&f), &EvalOptions::default()).unwrap();
    assert_eq!(rep.n_samples, inside);
    let all = cross_dataset_eval(&ConstantVelocity, &data, 5, None, &EvalOptions::default()).unwrap();
    assert_eq!(all.n_samples, data.len());
}

#[test]
fn report_serializes_to_json() {
    let data = dataset(5, 39);
    let rep = evaluate(&ConstantVelocity, &data, 5, &EvalOptions::default()).unwrap();
    let back: EvalReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn latency_table_has_one_row_per_batch_size() {
    let model = Ascent::new(
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    let rows = latency_bench(&model, &LATENCY_BATCH_SIZES, 0, 1, 0).unwrap();
    assert_eq!(rows.iter().map(|r| r.batch_size).collect::<Vec<_>>(), LATENCY_BATCH_SIZES);
    assert!(rows.iter().all(|r| r.median_ms > 0.0 && r.p90_ms >= r.median_ms));
    let csv = latency_csv(&rows);
    assert!(csv.starts_with("batch_size,median_ms,p90_ms\n"));
    assert_eq!(csv.lines().count(), 6);
    assert!(latency_bench(&model, &[1], 0, 0, 0).is_err());
}
