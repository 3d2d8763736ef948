//! Equivariant network layers.
//!
//! Constrained layers store one learnable coefficient per intertwiner basis
//! element; the dense weight is realized on the tape through a constant
//! sparse map, so gradient steps can never leave the equivariant subspace.
//! Every layer also has an unconstrained ("free") twin with the same shapes,
//! used by the non-equivariant baseline.

mod basis;
mod conv;
mod linear;
mod lstm;
mod sequential;

pub use basis::{constraint_matrix, solve_intertwiner_basis, IntertwinerBasis};
pub use conv::{equi_conv2d_forward, Conv2d, ConvSpec, RealizedConv2d};
pub use linear::{equi_linear_forward, Linear, RealizedLinear};
pub use lstm::{lstm_step, InitMode, LstmCell, LstmState, RealizedLstm};
pub use sequential::{Layer, LayerSpec, Outputter, RealizedSequential, Sequential};

use thiserror::Error;

use crate::autodiff::{AutodiffError, Matrix};
use crate::group::{Element, FeatureField, GroupError, Representation, Spatial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("representation mismatch: expected {expected}, got {actual}")]
    RepMismatch { expected: String, actual: String },
    #[error("unsupported spatial input: {0}")]
    UnsupportedSpatial(String),
    #[error("invalid layer configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn check_rep(expected: &Representation, actual: &Representation) -> Result<()> {
    if expected != actual {
        return Err(NnError::RepMismatch {
            expected: expected.label(),
            actual: actual.label(),
        });
    }
    Ok(())
}

/// Applies `g` to every column of a batch whose columns are fields of
/// `rep` over `spatial`.
pub fn act_on_columns(
    rep: &Representation,
    spatial: Spatial,
    g: Element,
    batch: &Matrix,
) -> Result<Matrix> {
    let mut cols = Vec::with_capacity(batch.cols());
    for c in 0..batch.cols() {
        let field = FeatureField::new(rep.clone(), spatial, batch.col(c))?;
        cols.push(field.act(g)?.into_values());
    }
    Ok(Matrix::from_columns(&cols))
}

pub(crate) fn gaussian(rng: &mut impl rand::Rng, n: usize, std: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}
