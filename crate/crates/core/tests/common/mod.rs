//! Test-only oracles: central finite differences and brute-force metrics.
//!
//! Nothing here calls into the analytic gradient or vectorized metric code
//! paths it is used to check.

#![allow(dead_code)]

use ascent_core::autograd::{Graph, Tensor, Var};
use ascent_core::dataset::Sample;
use ascent_core::geometry::CoordinateMode;
use ascent_core::model::{Ascent, ModelConfig, OutputMode, SpeedActivation};
use ascent_core::training::{shard_gradient, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Central difference of `f` at `x` for each listed coordinate.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vectors vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Shape and sampling range of one input to [`check_op`].
pub struct Input {
    pub shape: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

pub fn input(shape: &[usize], lo: f64, hi: f64) -> Input {
    Input {
        shape: shape.to_vec(),
        lo,
        hi,
    }
}

/// Builds `op` on random inputs and compares its analytic gradient against
/// central differences of the scalar `sum(out ⊙ w)` for random weights `w`.
/// Returns the worst relative error over `trials`.
pub fn check_op(
    trials: usize,
    seed: u64,
    inputs: &[Input],
    op: &dyn Fn(&mut Graph, &[Var]) -> Var,
) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let values: Vec<Vec<f64>> = inputs
            .iter()
            .map(|s| random_vec(&mut r, s.shape.iter().product(), s.lo, s.hi))
            .collect();
        let weights = {
            let mut g = Graph::new();
            let vars = leaves(&mut g, inputs, &values, false);
            let out = op(&mut g, &vars);
            random_vec(&mut r, g.value(out).numel(), -1.0, 1.0)
        };
        let eval = |vals: &[Vec<f64>]| -> f64 {
            let mut g = Graph::new();
            let vars = leaves(&mut g, inputs, vals, false);
            let out = op(&mut g, &vars);
            g.value(out).data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let mut g = Graph::new();
        let vars = leaves(&mut g, inputs, &values, true);
        let out = op(&mut g, &vars);
        let w = g.constant(Tensor::new(g.value(out).shape().to_vec(), weights.clone()).unwrap());
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod);
        g.backward(loss).unwrap();

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (k, var) in vars.iter().enumerate() {
            let n = values[k].len();
            analytic.extend(g.grad(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]));
            let coords: Vec<usize> = (0..n).collect();
            let mut f = |x: &[f64]| {
                let mut vals = values.clone();
                vals[k] = x.to_vec();
                eval(&vals)
            };
            numeric.extend(central_diff(&mut f, &values[k], &coords));
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn leaves(g: &mut Graph, inputs: &[Input], values: &[Vec<f64>], rg: bool) -> Vec<Var> {
    inputs
        .iter()
        .zip(values)
        .map(|(s, v)| g.leaf(Tensor::new(s.shape.clone(), v.clone()).unwrap(), rg))
        .collect()
}

/// Naive loop minADE/minFDE over modes; returns `(min_ade, min_fde)`.
pub fn brute_min_ade_fde(pred: &[Vec<[f64; 3]>], gt: &[[f64; 3]]) -> (f64, f64) {
    let mut best_ade = f64::INFINITY;
    let mut best_fde = f64::INFINITY;
    for mode in pred {
        let mut total = 0.0;
        for t in 0..gt.len() {
            let mut sq = 0.0;
            for c in 0..3 {
                sq += (mode[t][c] - gt[t][c]) * (mode[t][c] - gt[t][c]);
            }
            total += sq.sqrt();
        }
        let ade = total / gt.len() as f64;
        let last = gt.len() - 1;
        let mut sq = 0.0;
        for c in 0..3 {
            sq += (mode[last][c] - gt[last][c]) * (mode[last][c] - gt[last][c]);
        }
        if ade < best_ade {
            best_ade = ade;
        }
        if sq.sqrt() < best_fde {
            best_fde = sq.sqrt();
        }
    }
    (best_ade, best_fde)
}

/// Exhaustive argmin of mean per-step distance; first index wins ties.
pub fn brute_wta(pred: &[Vec<[f64; 3]>], gt: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (m, mode) in pred.iter().enumerate() {
        let mut total = 0.0;
        for t in 0..gt.len() {
            let d: f64 = (0..3).map(|c| (mode[t][c] - gt[t][c]).powi(2)).sum();
            total += d.sqrt();
        }
        let cost = total / gt.len() as f64;
        if cost < best_cost {
            best_cost = cost;
            best = m;
        }
    }
    best
}

pub type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// Every differentiable graph operation with a representative input layout.
pub fn op_suite() -> Vec<(&'static str, Vec<Input>, OpFn)> {
    vec![
        (
            "matmul",
            vec![input(&[4, 3], -1.0, 1.0), input(&[3, 2], -1.0, 1.0)],
            Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()),
        ),
        (
            "add_broadcast",
            vec![input(&[2, 3, 4], -1.0, 1.0), input(&[3, 4], -1.0, 1.0)],
            Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
        ),
        (
            "sub",
            vec![input(&[4], -1.0, 1.0), input(&[3, 4], -1.0, 1.0)],
            Box::new(|g, v| g.sub(v[0], v[1]).unwrap()),
        ),
        (
            "mul_broadcast",
            vec![input(&[3, 4], -1.0, 1.0), input(&[4], -1.0, 1.0)],
            Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
        ),
        (
            "div",
            vec![input(&[3, 4], -1.0, 1.0), input(&[3, 4], 0.5, 2.0)],
            Box::new(|g, v| g.div(v[0], v[1]).unwrap()),
        ),
        (
            "relu",
            vec![input(&[5, 3], -1.0, 1.0)],
            Box::new(|g, v| g.relu(v[0])),
        ),
        (
            "sin",
            vec![input(&[6], -3.0, 3.0)],
            Box::new(|g, v| g.sin(v[0])),
        ),
        (
            "cos",
            vec![input(&[6], -3.0, 3.0)],
            Box::new(|g, v| g.cos(v[0])),
        ),
        (
            "sqrt",
            vec![input(&[6], 0.1, 4.0)],
            Box::new(|g, v| g.sqrt(v[0])),
        ),
        (
            "scale",
            vec![input(&[2, 3], -1.0, 1.0)],
            Box::new(|g, v| g.scale(v[0], -2.5)),
        ),
        (
            "softplus",
            vec![input(&[8], -30.0, 30.0)],
            Box::new(|g, v| g.softplus(v[0])),
        ),
        (
            "softmax_last",
            vec![input(&[5], -3.0, 3.0)],
            Box::new(|g, v| g.softmax(v[0], 0).unwrap()),
        ),
        (
            "softmax_inner_axis",
            vec![input(&[3, 4, 2], -3.0, 3.0)],
            Box::new(|g, v| g.softmax(v[0], 1).unwrap()),
        ),
        (
            "layer_norm",
            vec![
                input(&[3, 8], -2.0, 2.0),
                input(&[8], 0.5, 1.5),
                input(&[8], -0.5, 0.5),
            ],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2]).unwrap()),
        ),
        (
            "attention",
            vec![
                input(&[4, 16], -1.0, 1.0),
                input(&[4, 16], -1.0, 1.0),
                input(&[4, 16], -1.0, 1.0),
            ],
            Box::new(|g, v| g.attention(v[0], v[1], v[2], 2, 4).unwrap()),
        ),
        (
            "attention_grouped",
            vec![
                input(&[6, 8], -1.0, 1.0),
                input(&[6, 8], -1.0, 1.0),
                input(&[6, 8], -1.0, 1.0),
            ],
            Box::new(|g, v| g.attention(v[0], v[1], v[2], 4, 3).unwrap()),
        ),
        (
            "max_pool_time",
            vec![input(&[5, 4], -1.0, 1.0)],
            Box::new(|g, v| g.max_pool_time(v[0]).unwrap()),
        ),
        (
            "max_pool_groups",
            vec![input(&[6, 3], -1.0, 1.0)],
            Box::new(|g, v| g.max_pool_groups(v[0], 3).unwrap()),
        ),
        (
            "smooth_l1",
            vec![input(&[10], -2.0, 2.0), input(&[10], -2.0, 2.0)],
            Box::new(|g, v| g.smooth_l1(v[0], v[1], 1.0).unwrap()),
        ),
        (
            "cross_entropy",
            vec![input(&[3, 5], -3.0, 3.0)],
            Box::new(|g, v| g.cross_entropy(v[0], &[4, 0, 2]).unwrap()),
        ),
        (
            "sum_mean",
            vec![input(&[3, 2], -1.0, 1.0)],
            Box::new(|g, v| {
                let s = g.sum(v[0]);
                let m = g.mean(v[0]);
                g.stack_last(&[s, m]).unwrap()
            }),
        ),
        (
            "reshape_gather",
            vec![input(&[2, 6], -1.0, 1.0)],
            Box::new(|g, v| {
                let r = g.reshape(v[0], vec![3, 4]).unwrap();
                g.gather_last(r, &[3, 0, 0]).unwrap()
            }),
        ),
        (
            "index_rows",
            vec![input(&[4, 3], -1.0, 1.0)],
            Box::new(|g, v| g.index_rows(v[0], &[2, 0, 2]).unwrap()),
        ),
        (
            "repeat_rows",
            vec![input(&[2, 3], -1.0, 1.0)],
            Box::new(|g, v| g.repeat_rows(v[0], 3).unwrap()),
        ),
        (
            "cumsum_stack",
            vec![input(&[2, 4], -1.0, 1.0), input(&[2, 4], -1.0, 1.0)],
            Box::new(|g, v| {
                let c = g.cumsum_last(v[0]);
                g.stack_last(&[c, v[1]]).unwrap()
            }),
        ),
        (
            "add_scalar_square",
            vec![input(&[5], -1.0, 1.0)],
            Box::new(|g, v| {
                let s = g.square(v[0]);
                g.add_scalar(s, 0.25)
            }),
        ),
    ]
}

/// Roughly straight 1 Hz history followed by a noisy continuation at 0.1 Hz.
pub fn random_sample(r: &mut ChaCha8Rng, th: usize, tf: usize) -> Sample {
    let start = [r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0), r.gen_range(0.1..0.6)];
    let yaw: f64 = r.gen_range(-3.0..3.0);
    let v = r.gen_range(0.02..0.05);
    let mut hist = Vec::new();
    for i in 0..th {
        let s = v * i as f64;
        hist.push([
            start[0] + s * yaw.sin() + r.gen_range(-0.003..0.003),
            start[1] + s * yaw.cos() + r.gen_range(-0.003..0.003),
            start[2] + r.gen_range(-0.003..0.003),
        ]);
    }
    let last = hist[th - 1];
    let fut = (1..=tf)
        .map(|j| {
            let s = v * 10.0 * j as f64;
            [
                last[0] + s * yaw.sin() + r.gen_range(-0.4..0.4),
                last[1] + s * yaw.cos() + r.gen_range(-0.4..0.4),
                last[2] + r.gen_range(-0.05..0.05),
            ]
        })
        .collect();
    Sample::from_parts(0, 0, (th - 1) as f64, 1.0, 0.1, hist, fut).unwrap()
}

/// D=8, T_h=4, T_f=3, k=2; `variant` cycles through the ablation switches.
pub fn tiny_model(variant: usize) -> ModelConfig {
    let base = ModelConfig {
        d_model: 8,
        n_blocks: 1,
        n_heads: 2,
        k: 2,
        history_len: 4,
        future_len: 3,
        ..ModelConfig::default()
    };
    match variant % 6 {
        0 => base,
        1 => ModelConfig {
            coordinates: CoordinateMode::Global,
            ..base
        },
        2 => ModelConfig {
            coordinates: CoordinateMode::Local { angular: false },
            ..base
        },
        3 => ModelConfig {
            output: OutputMode::DirectXyz,
            ..base
        },
        4 => ModelConfig {
            speed_activation: SpeedActivation::Linear,
            pose_embedding: false,
            ..base
        },
        _ => ModelConfig { n_blocks: 2, ..base },
    }
}

/// Worst relative error between the analytic full-model loss gradient and
/// central differences, over `trials` random models and batches, probing 25
/// random parameter coordinates per trial.
pub fn model_gradcheck(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mc = tiny_model(trial);
        let mut model = Ascent::new(mc.clone(), trial as u64).unwrap();
        let samples: Vec<Sample> = (0..2).map(|_| random_sample(&mut r, mc.history_len, mc.future_len)).collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let analytic = shard_gradient(&model, &refs, &cfg, 1.0).unwrap();
        let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.numel()).collect();
        let total: usize = sizes.iter().sum();
        let mut a = Vec::new();
        let mut n = Vec::new();
        for _ in 0..25 {
            let mut flat = r.gen_range(0..total);
            let mut i = 0;
            while flat >= sizes[i] {
                flat -= sizes[i];
                i += 1;
            }
            let orig = model.params().get(i).data()[flat];
            let mut at = |v: f64| {
                model.params_mut().get_mut(i).data_mut()[flat] = v;
                shard_gradient(&model, &refs, &cfg, 1.0).unwrap().loss
            };
            let up = at(orig + FD_STEP);
            let down = at(orig - FD_STEP);
            at(orig);
            a.push(analytic.grads[i][flat]);
            n.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(rel_err(&a, &n));
    }
    worst
}

/// Step-by-step integrator with yaw advancing at a fixed rate. Works on the
/// angles directly rather than on sine/cosine pairs.
pub fn integrate_turn(speed: f64, yaw0: f64, rate: f64, pitch: f64, dt: f64, steps: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
    for t in 0..steps {
        let yaw = yaw0 + rate * t as f64;
        let h = speed * dt * pitch.cos();
        x += h * yaw.sin();
        y += h * yaw.cos();
        z += speed * dt * pitch.sin();
        out.push([x, y, z]);
    }
    out
}
