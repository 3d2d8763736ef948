//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Every value is a row-major
//! [`Matrix`]; batched network activations are stored one sample per column.
//! Parameters live in a [`ParamStore`] and enter a tape through
//! [`Tape::param`], which records the mapping so that [`Tape::backward`] can
//! hand back gradients keyed by parameter.

mod gradcheck;
mod matrix;
mod optim;
mod params;
mod tape;

pub use gradcheck::{finite_difference_error, primitive_gradient_errors};
pub use matrix::Matrix;
pub use optim::{clip_grad_norm, Adam, Optimizer, OptimizerConfig, Sgd};
pub use params::{Gradients, ParamId, ParamStore, CHECKPOINT_HEADER};
pub use tape::{ConvGeometry, Grads, SparseMatrix, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("loss must be a 1x1 scalar, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
