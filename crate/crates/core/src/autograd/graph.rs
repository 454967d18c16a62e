use std::sync::Arc;

use super::kernel::{gemm, MatView};
use super::{AutogradError, Tensor};

/// Epsilon used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Relu(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    Softplus(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Softmax {
        x: Var,
        axis_len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        probs: Vec<f64>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    SmoothL1 {
        pred: Var,
        target: Var,
        beta: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    GatherLast {
        x: Var,
        index: Vec<usize>,
    },
    IndexRows {
        x: Var,
        rows: Vec<usize>,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    CumsumLast(Var),
    StackLast(Vec<Var>),
}

struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order and backward is a single reverse sweep. A graph
/// supports exactly one call to [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn suffix_broadcast(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>, AutogradError> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long[long.len() - short.len()..] != *short {
        return Err(AutogradError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(long.to_vec())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

fn row_split(shape: &[usize]) -> (usize, usize) {
    match shape.split_first() {
        Some((&rows, rest)) => (rows, rest.iter().product()),
        None => (1, 1),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.push_shared(Arc::new(value), requires_grad, op)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that shares its storage with the caller (used for parameters).
    pub fn shared_leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_shared(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by [`Graph::backward`]. `None` if the
    /// node does not require gradients or received no contribution.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, n) = av.dims2()?;
        let (n2, p) = bv.dims2()?;
        if n != n2 {
            return Err(AutogradError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * p];
        gemm(
            m,
            n,
            p,
            av.data(),
            MatView::row_major(0, n),
            bv.data(),
            MatView::row_major(0, p),
            &mut out,
            MatView::row_major(0, p),
            0.0,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, p], out)?, rg, Op::MatMul(a, b)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutogradError> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = suffix_broadcast(name, av.shape(), bv.shape())?;
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let (na, nb) = (ad.len(), bd.len());
        // The smaller operand tiles the larger one in whole blocks.
        let mut out = Vec::with_capacity(n);
        if na == n {
            for block in ad.chunks(nb) {
                out.extend(block.iter().zip(bd).map(|(&x, &y)| f(x, y)));
            }
        } else {
            for block in bd.chunks(na) {
                out.extend(ad.iter().zip(block).map(|(&x, &y)| f(x, y)));
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, op))
    }

    /// Elementwise sum; the lower-rank operand broadcasts over leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).expect("unary shape"), rg, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, f64::cos, Op::Cos(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0) + (-v.abs()).exp().ln_1p(), Op::Softplus(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        self.unary(x, |v| v + offset, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("square of identical shapes")
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(AutogradError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let data = xv.data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * axis_len + a) * inner + i;
                let max = (0..axis_len)
                    .map(|a| data[at(a)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..axis_len {
                    let e = (data[at(a)] - max).exp();
                    out[at(a)] = e;
                    total += e;
                }
                for a in 0..axis_len {
                    out[at(a)] /= total;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Softmax { x, axis_len, inner },
        ))
    }

    /// Layer normalization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let width = xv.last_dim();
        for p in [gain, bias] {
            if self.value(p).shape() != [width] {
                return Err(AutogradError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let data = xv.data();
        let rows = data.len() / width.max(1);
        let mut normed = vec![0.0; data.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; data.len()];
        for r in 0..rows {
            let row = &data[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for c in 0..width {
                let h = (row[c] - mean) * s;
                normed[r * width + c] = h;
                out[r * width + c] = h * g[c] + b[c];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
        ))
    }

    /// Multi-head scaled dot-product attention core.
    ///
    /// `q`, `k`, `v` are `[N × D]` where the `N` rows form consecutive
    /// sequences of `seq_len` tokens; tokens only attend within their own
    /// sequence. Each of the `heads` heads uses a contiguous `D / heads`
    /// column block, and head outputs are written back into the same block,
    /// which is the concatenation of heads.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
    ) -> Result<Var, AutogradError> {
        let (n, d) = self.value(q).dims2()?;
        for other in [k, v] {
            if self.value(other).shape() != [n, d] {
                return Err(AutogradError::ShapeMismatch {
                    op: "attention",
                    lhs: vec![n, d],
                    rhs: self.value(other).shape().to_vec(),
                });
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(AutogradError::HeadCount { width: d, heads });
        }
        if seq_len == 0 || n % seq_len != 0 {
            return Err(AutogradError::InvalidShape {
                op: "attention",
                shape: vec![n, d],
                reason: "row count is not a multiple of the sequence length",
            });
        }
        let dh = d / heads;
        let t = seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let groups = n / t;
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![0.0; groups * heads * t * t];
        let mut out = vec![0.0; n * d];
        for g in 0..groups {
            for h in 0..heads {
                let base = g * t * d + h * dh;
                let p = &mut probs[(g * heads + h) * t * t..(g * heads + h + 1) * t * t];
                gemm(
                    t,
                    dh,
                    t,
                    qd,
                    MatView::row_major(base, d),
                    kd,
                    MatView::transposed(base, d),
                    p,
                    MatView::row_major(0, t),
                    0.0,
                );
                for row in p.chunks_mut(t) {
                    let max = row
                        .iter()
                        .map(|s| s * scale)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s * scale - max).exp();
                        total += *s;
                    }
                    row.iter_mut().for_each(|s| *s /= total);
                }
                gemm(
                    t,
                    t,
                    dh,
                    p,
                    MatView::row_major(0, t),
                    vd,
                    MatView::row_major(base, d),
                    &mut out,
                    MatView::row_major(base, d),
                    0.0,
                );
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            rg,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            },
        ))
    }

    /// Feature-wise maximum over the time axis of a `[T × D]` input → `[D]`.
    pub fn max_pool_time(&mut self, x: Var) -> Result<Var, AutogradError> {
        let (t, d) = self.value(x).dims2()?;
        let pooled = self.max_pool_groups(x, t)?;
        self.reshape(pooled, vec![d])
    }

    /// Feature-wise maximum over each consecutive group of `seq_len` rows
    /// of a `[B·T × D]` input → `[B × D]`. Ties route to the first row.
    pub fn max_pool_groups(&mut self, x: Var, seq_len: usize) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let (n, d) = xv.dims2()?;
        if n == 0 || seq_len == 0 {
            return Err(AutogradError::EmptyInput { op: "max_pool" });
        }
        if n % seq_len != 0 {
            return Err(AutogradError::InvalidShape {
                op: "max_pool",
                shape: vec![n, d],
                reason: "row count is not a multiple of the sequence length",
            });
        }
        let groups = n / seq_len;
        let data = xv.data();
        let mut out = vec![0.0; groups * d];
        let mut argmax = vec![0; groups * d];
        for g in 0..groups {
            for c in 0..d {
                let mut best = g * seq_len * d + c;
                for r in 1..seq_len {
                    let idx = (g * seq_len + r) * d + c;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out[g * d + c] = data[best];
                argmax[g * d + c] = best;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![groups, d], out)?,
            rg,
            Op::MaxPool { x, argmax },
        ))
    }

    /// Mean smooth-L1 (Huber-style) loss between equally shaped tensors.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var, AutogradError> {
        if !(beta > 0.0) {
            return Err(AutogradError::InvalidArgument("smooth_l1 beta must be positive"));
        }
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(AutogradError::ShapeMismatch {
                op: "smooth_l1",
                lhs: pv.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let n = pv.numel();
        if n == 0 {
            return Err(AutogradError::EmptyInput { op: "smooth_l1" });
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(p, t)| {
                let r = (p - t).abs();
                if r < beta {
                    0.5 * r * r / beta
                } else {
                    r - 0.5 * beta
                }
            })
            .sum();
        let rg = self.rg(&[pred, target]);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            rg,
            Op::SmoothL1 { pred, target, beta },
        ))
    }

    /// Mean cross-entropy of `[k]` or `[R × k]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AutogradError> {
        let lv = self.value(logits);
        let k = lv.last_dim();
        let rows = if lv.rank() <= 1 { 1 } else { lv.numel() / k.max(1) };
        if lv.rank() > 2 || targets.len() != rows || k == 0 {
            return Err(AutogradError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let data = lv.data();
        let mut probs = vec![0.0; data.len()];
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            if target >= k {
                return Err(AutogradError::IndexOutOfRange { index: target, len: k });
            }
            let row = &data[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            total += lse - row[target];
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.numel().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutogradError> {
        let value = (*self.nodes[x.0].value).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Gathers positions along the last axis: `out[..., j] = x[..., index[j]]`.
    pub fn gather_last(&mut self, x: Var, index: &[usize]) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if let Some(&bad) = index.iter().find(|&&i| i >= c) {
            return Err(AutogradError::IndexOutOfRange { index: bad, len: c });
        }
        let rows = xv.numel() / c.max(1);
        let data = xv.data();
        let mut out = Vec::with_capacity(rows * index.len());
        for r in 0..rows {
            out.extend(index.iter().map(|&i| data[r * c + i]));
        }
        let mut shape = xv.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = index.len(),
            None => shape.push(index.len()),
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::GatherLast {
                x,
                index: index.to_vec(),
            },
        ))
    }

    /// Selects entries along the first axis.
    pub fn index_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        let (n, width) = row_split(xv.shape());
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(AutogradError::IndexOutOfRange { index: bad, len: n });
        }
        let data = xv.data();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&data[r * width..(r + 1) * width]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = rows.len();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::IndexRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Repeats every first-axis entry `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var, AutogradError> {
        let xv = self.value(x);
        if xv.rank() == 0 {
            return Err(AutogradError::InvalidShape {
                op: "repeat_rows",
                shape: Vec::new(),
                reason: "scalar has no rows",
            });
        }
        let (n, width) = row_split(xv.shape());
        let data = xv.data();
        let mut out = Vec::with_capacity(n * times * width);
        for r in 0..n {
            for _ in 0..times {
                out.extend_from_slice(&data[r * width..(r + 1) * width]);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = n * times;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::RepeatRows { x, times }))
    }

    /// Running sum along the last axis.
    pub fn cumsum_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim().max(1);
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            for j in 1..row.len() {
                row[j] += row[j - 1];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(shape, out).expect("cumsum shape"),
            rg,
            Op::CumsumLast(x),
        )
    }

    /// Stacks equally shaped tensors along a new trailing axis.
    pub fn stack_last(&mut self, parts: &[Var]) -> Result<Var, AutogradError> {
        let first = parts.first().ok_or(AutogradError::EmptyInput { op: "stack_last" })?;
        let shape = self.value(*first).shape().to_vec();
        for p in parts {
            if self.value(*p).shape() != shape.as_slice() {
                return Err(AutogradError::ShapeMismatch {
                    op: "stack_last",
                    lhs: shape,
                    rhs: self.value(*p).shape().to_vec(),
                });
            }
        }
        let n = parts.len();
        let len: usize = shape.iter().product();
        let mut out = vec![0.0; len * n];
        for (j, p) in parts.iter().enumerate() {
            for (i, v) in self.value(*p).data().iter().enumerate() {
                out[i * n + j] = *v;
            }
        }
        let mut out_shape = shape;
        out_shape.push(n);
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            rg,
            Op::StackLast(parts.to_vec()),
        ))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    ///
    /// Errors if `loss` has more than one element or if backward already ran
    /// on this graph.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutogradError> {
        if self.backward_done {
            return Err(AutogradError::BackwardTwice);
        }
        let root = self.value(loss);
        if root.numel() != 1 {
            return Err(AutogradError::NonScalarRoot(root.shape().to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(go) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &go);
            self.grads[i] = Some(go);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, go: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out = &nodes[i].value;
        let val = |v: &Var| nodes[v.0].value.data();
        let needs = |v: &Var| nodes[v.0].requires_grad;
        let numel = |v: &Var| nodes[v.0].value.numel();

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, n) = nodes[a.0].value.dims2().expect("matmul lhs");
                let p = out.last_dim();
                if needs(a) {
                    let ga = accumulate(&mut grads[a.0], m * n);
                    gemm(
                        m,
                        p,
                        n,
                        go,
                        MatView::row_major(0, p),
                        val(b),
                        MatView::transposed(0, p),
                        ga,
                        MatView::row_major(0, n),
                        1.0,
                    );
                }
                if needs(b) {
                    let gb = accumulate(&mut grads[b.0], n * p);
                    gemm(
                        n,
                        m,
                        p,
                        val(a),
                        MatView::transposed(0, n),
                        go,
                        MatView::row_major(0, p),
                        gb,
                        MatView::row_major(0, p),
                        1.0,
                    );
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (v, s) in [(a, 1.0), (b, sign)] {
                    if needs(v) {
                        let n = numel(v);
                        let g = accumulate(&mut grads[v.0], n);
                        for (j, gv) in go.iter().enumerate() {
                            g[j % n] += s * gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(a), val(b));
                let (na, nb) = (ad.len(), bd.len());
                if needs(a) {
                    let g = accumulate(&mut grads[a.0], na);
                    for (j, gv) in go.iter().enumerate() {
                        g[j % na] += gv * bd[j % nb];
                    }
                }
                if needs(b) {
                    let g = accumulate(&mut grads[b.0], nb);
                    for (j, gv) in go.iter().enumerate() {
                        g[j % nb] += gv * ad[j % na];
                    }
                }
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(a), val(b));
                let (na, nb) = (ad.len(), bd.len());
                if needs(a) {
                    let g = accumulate(&mut grads[a.0], na);
                    for (j, gv) in go.iter().enumerate() {
                        g[j % na] += gv / bd[j % nb];
                    }
                }
                if needs(b) {
                    let g = accumulate(&mut grads[b.0], nb);
                    for (j, gv) in go.iter().enumerate() {
                        let y = bd[j % nb];
                        g[j % nb] -= gv * ad[j % na] / (y * y);
                    }
                }
            }
            Op::Relu(x) => {
                let xd = val(x);
                let g = accumulate(&mut grads[x.0], xd.len());
                for j in 0..xd.len() {
                    if xd[j] > 0.0 {
                        g[j] += go[j];
                    }
                }
            }
            Op::Sin(x) => {
                let xd = val(x);
                let g = accumulate(&mut grads[x.0], xd.len());
                for j in 0..xd.len() {
                    g[j] += go[j] * xd[j].cos();
                }
            }
            Op::Cos(x) => {
                let xd = val(x);
                let g = accumulate(&mut grads[x.0], xd.len());
                for j in 0..xd.len() {
                    g[j] -= go[j] * xd[j].sin();
                }
            }
            Op::Sqrt(x) => {
                let yd = out.data();
                let g = accumulate(&mut grads[x.0], yd.len());
                for j in 0..yd.len() {
                    g[j] += go[j] * 0.5 / yd[j];
                }
            }
            Op::Softplus(x) => {
                let xd = val(x);
                let g = accumulate(&mut grads[x.0], xd.len());
                for j in 0..xd.len() {
                    let sig = if xd[j] >= 0.0 {
                        1.0 / (1.0 + (-xd[j]).exp())
                    } else {
                        let e = xd[j].exp();
                        e / (1.0 + e)
                    };
                    g[j] += go[j] * sig;
                }
            }
            Op::Scale(x, factor) => {
                let g = accumulate(&mut grads[x.0], go.len());
                for j in 0..go.len() {
                    g[j] += go[j] * factor;
                }
            }
            Op::AddScalar(x) | Op::CumsumLast(x) | Op::Reshape(x) => {
                let g = accumulate(&mut grads[x.0], go.len());
                if matches!(nodes[i].op, Op::CumsumLast(_)) {
                    let c = out.last_dim().max(1);
                    for (grow, orow) in g.chunks_mut(c).zip(go.chunks(c)) {
                        let mut acc = 0.0;
                        for j in (0..orow.len()).rev() {
                            acc += orow[j];
                            grow[j] += acc;
                        }
                    }
                } else {
                    for j in 0..go.len() {
                        g[j] += go[j];
                    }
                }
            }
            Op::Softmax { x, axis_len, inner } => {
                let y = out.data();
                let (axis_len, inner) = (*axis_len, *inner);
                let outer = y.len() / (axis_len * inner).max(1);
                let g = accumulate(&mut grads[x.0], y.len());
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |a: usize| (o * axis_len + a) * inner + ii;
                        let dot: f64 = (0..axis_len).map(|a| go[at(a)] * y[at(a)]).sum();
                        for a in 0..axis_len {
                            g[at(a)] += y[at(a)] * (go[at(a)] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let width = out.last_dim();
                let gd = val(gain);
                if needs(gain) {
                    let g = accumulate(&mut grads[gain.0], width);
                    for (j, gv) in go.iter().enumerate() {
                        g[j % width] += gv * normed[j];
                    }
                }
                if needs(bias) {
                    let g = accumulate(&mut grads[bias.0], width);
                    for (j, gv) in go.iter().enumerate() {
                        g[j % width] += gv;
                    }
                }
                if needs(x) {
                    let g = accumulate(&mut grads[x.0], go.len());
                    let w = width as f64;
                    for (r, s) in rstd.iter().enumerate() {
                        let span = r * width..(r + 1) * width;
                        let (orow, nrow) = (&go[span.clone()], &normed[span.clone()]);
                        let mut mean_d = 0.0;
                        let mut mean_dn = 0.0;
                        for c in 0..width {
                            let d = orow[c] * gd[c];
                            mean_d += d;
                            mean_dn += d * nrow[c];
                        }
                        mean_d /= w;
                        mean_dn /= w;
                        for c in 0..width {
                            let d = orow[c] * gd[c];
                            g[r * width + c] += s * (d - mean_d - nrow[c] * mean_dn);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            } => {
                let (n, d) = out.dims2().expect("attention output");
                let (heads, t) = (*heads, *seq_len);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (val(q), val(k), val(v));
                let mut gq = vec![0.0; n * d];
                let mut gk = vec![0.0; n * d];
                let mut gv = vec![0.0; n * d];
                let mut dp = vec![0.0; t * t];
                for grp in 0..n / t {
                    for h in 0..heads {
                        let base = grp * t * d + h * dh;
                        let p = &probs[(grp * heads + h) * t * t..(grp * heads + h + 1) * t * t];
                        // dV += Pᵀ · dO
                        gemm(
                            t,
                            t,
                            dh,
                            p,
                            MatView::transposed(0, t),
                            go,
                            MatView::row_major(base, d),
                            &mut gv,
                            MatView::row_major(base, d),
                            1.0,
                        );
                        // dP = dO · Vᵀ
                        gemm(
                            t,
                            dh,
                            t,
                            go,
                            MatView::row_major(base, d),
                            vd,
                            MatView::transposed(base, d),
                            &mut dp,
                            MatView::row_major(0, t),
                            0.0,
                        );
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the score scale
                        for r in 0..t {
                            let row = r * t..(r + 1) * t;
                            let dot: f64 = dp[row.clone()]
                                .iter()
                                .zip(&p[row.clone()])
                                .map(|(a, b)| a * b)
                                .sum();
                            for c in row {
                                dp[c] = scale * p[c] * (dp[c] - dot);
                            }
                        }
                        gemm(
                            t,
                            t,
                            dh,
                            &dp,
                            MatView::row_major(0, t),
                            kd,
                            MatView::row_major(base, d),
                            &mut gq,
                            MatView::row_major(base, d),
                            1.0,
                        );
                        gemm(
                            t,
                            t,
                            dh,
                            &dp,
                            MatView::transposed(0, t),
                            qd,
                            MatView::row_major(base, d),
                            &mut gk,
                            MatView::row_major(base, d),
                            1.0,
                        );
                    }
                }
                for (var, local) in [(q, gq), (k, gk), (v, gv)] {
                    if needs(var) {
                        let g = accumulate(&mut grads[var.0], n * d);
                        for (a, b) in g.iter_mut().zip(local) {
                            *a += b;
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let g = accumulate(&mut grads[x.0], numel(x));
                for (j, &src) in argmax.iter().enumerate() {
                    g[src] += go[j];
                }
            }
            Op::SmoothL1 { pred, target, beta } => {
                let (pd, td) = (val(pred), val(target));
                let n = pd.len() as f64;
                let local: Vec<f64> = pd
                    .iter()
                    .zip(td)
                    .map(|(p, t)| {
                        let r = p - t;
                        let d = if r.abs() < *beta { r / beta } else { r.signum() };
                        go[0] * d / n
                    })
                    .collect();
                for (var, s) in [(pred, 1.0), (target, -1.0)] {
                    if needs(var) {
                        let g = accumulate(&mut grads[var.0], local.len());
                        for (a, b) in g.iter_mut().zip(&local) {
                            *a += s * b;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let k = probs.len() / targets.len();
                let rows = targets.len() as f64;
                let g = accumulate(&mut grads[logits.0], probs.len());
                for (r, &target) in targets.iter().enumerate() {
                    for c in 0..k {
                        let onehot = if c == target { 1.0 } else { 0.0 };
                        g[r * k + c] += go[0] * (probs[r * k + c] - onehot) / rows;
                    }
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                let n = numel(x);
                let s = if matches!(nodes[i].op, Op::Mean(_)) {
                    go[0] / n as f64
                } else {
                    go[0]
                };
                let g = accumulate(&mut grads[x.0], n);
                g.iter_mut().for_each(|v| *v += s);
            }
            Op::GatherLast { x, index } => {
                let c = nodes[x.0].value.last_dim();
                let g = accumulate(&mut grads[x.0], numel(x));
                let l = index.len();
                for (r, orow) in go.chunks(l.max(1)).enumerate() {
                    for (j, &src) in index.iter().enumerate() {
                        g[r * c + src] += orow[j];
                    }
                }
            }
            Op::IndexRows { x, rows } => {
                let (_, width) = row_split(nodes[x.0].value.shape());
                let g = accumulate(&mut grads[x.0], numel(x));
                for (j, &r) in rows.iter().enumerate() {
                    for c in 0..width {
                        g[r * width + c] += go[j * width + c];
                    }
                }
            }
            Op::RepeatRows { x, times } => {
                let (n, width) = row_split(nodes[x.0].value.shape());
                let g = accumulate(&mut grads[x.0], n * width);
                for r in 0..n {
                    for rep in 0..*times {
                        let src = (r * times + rep) * width;
                        for c in 0..width {
                            g[r * width + c] += go[src + c];
                        }
                    }
                }
            }
            Op::StackLast(parts) => {
                let n = parts.len();
                for (j, p) in parts.iter().enumerate() {
                    if needs(p) {
                        let len = numel(p);
                        let g = accumulate(&mut grads[p.0], len);
                        for (ii, gv) in g.iter_mut().enumerate() {
                            *gv += go[ii * n + j];
                        }
                    }
                }
            }
        }
    }
}
