//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! The operator set is deliberately closed: matmul, add, scale, softmax,
//! layer norm, GELU, embedding gather, 1-D convolution, dropout, cross
//! entropy and permute/reshape. Everything else the encoder needs (MSE,
//! sums, row selection, relative-position gathers) is composed from these.

mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

use thiserror::Error;

pub use graph::{Graph, Var, IGNORE_INDEX};
pub use optim::{AdamConfig, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("axis {axis} invalid for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("{perm:?} is not a permutation of the axes of {shape:?}")]
    Permutation { perm: Vec<usize>, shape: Vec<usize> },
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("empty loss: every label is ignored")]
    EmptyLoss,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this graph; call reset_grads first")]
    BackwardTwice,
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("learning rate must be non-negative, got {0}")]
    InvalidLearningRate(f32),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}

#[cfg(test)]
mod tests;
