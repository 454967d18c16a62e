use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{AutogradError, Graph, Tensor, Var};

/// Ordered named parameter tensors.
///
/// Tensors sit behind `Arc` so a forward graph can borrow them as leaves
/// without copying; an optimizer step copies on write only if a graph still
/// holds a reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Arc<Tensor>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push((name.into(), Arc::new(value)));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[i].1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t.as_ref()))
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Adds every parameter to `g` as a shared leaf, in store order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| g.shared_leaf(Arc::clone(t), requires_grad))
            .collect()
    }
}

/// Fully connected layer `y = x W + b` with `W` stored as `[in × out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    /// Kaiming-uniform weights (fan-in), zero bias.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        let w = store.push(format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], data).expect("sized"));
        let b = store.push(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    /// Store indices of the weight and bias tensors.
    pub fn indices(&self) -> (usize, usize) {
        (self.w, self.b)
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var, AutogradError> {
        let y = g.matmul(x, p[self.w])?;
        g.add(y, p[self.b])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    gain: usize,
    bias: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.push(format!("{name}.g"), Tensor::filled(&[width], 1.0)),
            bias: store.push(format!("{name}.b"), Tensor::zeros(&[width])),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var, AutogradError> {
        g.layer_norm(x, p[self.gain], p[self.bias])
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn last(&self) -> Linear {
        *self.layers.last().expect("at least one layer")
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], mut x: Var) -> Result<Var, AutogradError> {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = g.relu(x);
            }
            x = layer.apply(g, p, x)?;
        }
        Ok(x)
    }
}

/// Pre-norm self-attention block with a two-layer feed-forward part.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff: Mlp,
    heads: usize,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            q: Linear::new(store, rng, &format!("{name}.q"), d, d),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d),
            o: Linear::new(store, rng, &format!("{name}.o"), d, d),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff: Mlp::new(store, rng, &format!("{name}.ff"), &[d, 2 * d, d]),
            heads,
        }
    }

    /// `x` is `[N × D]` holding consecutive sequences of `seq_len` tokens.
    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var, seq_len: usize) -> Result<Var, AutogradError> {
        let h = self.ln1.apply(g, p, x)?;
        let q = self.q.apply(g, p, h)?;
        let k = self.k.apply(g, p, h)?;
        let v = self.v.apply(g, p, h)?;
        let a = g.attention(q, k, v, self.heads, seq_len)?;
        let o = self.o.apply(g, p, a)?;
        let x = g.add(x, o)?;
        let h = self.ln2.apply(g, p, x)?;
        let f = self.ff.apply(g, p, h)?;
        g.add(x, f)
    }
}

/// `[k × D]` learnable mode queries drawn from `N(0, std²)`.
pub fn mode_queries(store: &mut ParamStore, rng: &mut ChaCha8Rng, k: usize, d: usize, std: f64) -> usize {
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..k * d).map(|_| normal.sample(rng)).collect();
    store.push("queries", Tensor::new(vec![k, d], data).expect("sized"))
}
