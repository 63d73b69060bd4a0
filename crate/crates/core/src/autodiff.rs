//! Minimal dense-tensor numeric core with reverse-mode differentiation,
//! a decoupled-weight-decay Adam optimizer, and finite-difference gradient
//! verification. Everything computes in 64-bit floats.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use optim::{adamw_step, AdamHyper, AdamState};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    BadRank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadDataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of bounds for {op} (limit {limit})")]
    IndexOutOfBounds { op: &'static str, index: usize, limit: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("non-finite update for parameter `{0}`")]
    NanUpdate(String),
    #[error("gradient missing for trainable parameter `{0}`")]
    MissingGradient(String),
}

/// A named tensor with a trainability flag; the unit the optimizer and the
/// freeze/swap machinery operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Parameter { name: name.into(), tensor, trainable: true }
    }
}
