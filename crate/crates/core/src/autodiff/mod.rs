//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it executes; [`Tape::backward`]
//! sweeps the record in reverse and returns gradients for leaves and bound
//! parameters. Trainable tensors live in a [`ParamStore`] and are bound to a
//! fresh tape for each forward pass, so a tape never outlives one batch.
//!
//! Broadcasting is limited to scalar-vs-tensor in the elementwise ops; bias
//! rows are tiled explicitly with [`Tape::repeat_rows`].

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use params::{ParamId, ParamStore, Parameter, TensorRecord};
pub use tape::{Gradients, Tape, Var, LEAKY_RELU_SLOPE};
pub use tensor::Tensor;

/// Checkpoint layout version written next to the tensor list.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: no inputs")]
    EmptyInput { op: &'static str },
    #[error("{op}: axis {axis} out of range")]
    InvalidAxis { op: &'static str, axis: usize },
    #[error("{op}: range {start}..{start}+{len} exceeds dimension {dim}")]
    OutOfRange {
        op: &'static str,
        start: usize,
        len: usize,
        dim: usize,
    },
    #[error("{0}")]
    InvalidArgument(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[cfg(test)]
mod tests;
