//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! then walks the records in reverse and accumulates gradients into every
//! node that requires them. Only the operations the forecasting model needs
//! are provided, all in 64-bit precision.
//!
//! ```
//! use ascent_core::autograd::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0), true);
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

mod graph;
mod kernel;
mod tensor;

pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutogradError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {op}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("feature width {width} is not divisible by {heads} attention heads")]
    HeadCount { width: usize, heads: usize },
    #[error("{op} received an empty input")]
    EmptyInput { op: &'static str },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("backward requires a single-element root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("{0}")]
    InvalidArgument(&'static str),
}
