//! Lipschitz-bounded networks and the plain MLP baseline.

mod lipnet;
mod mlp;
mod normalizer;
mod sandwich;

use alloc::vec::Vec;

pub use lipnet::{LipNetWeights, LipschitzNet};
pub use mlp::{DenseLayer, Mlp, LEAKY_SLOPE, PAIR_MIN_DIST};
pub use normalizer::AffineNormalizer;
pub use sandwich::{SandwichLayer, SandwichWeights};

use crate::diffcore::{Matrix, Tape, Var};
use crate::error::Result;

/// A learned vector field with a known Lipschitz bound.
pub trait Model {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Evaluates the model on each column of `xs`.
    fn forward_columns(&self, xs: &Matrix) -> Result<Matrix>;

    /// Upper bound on the ℓ₂ Lipschitz constant.
    fn lipschitz_bound(&self) -> f64;

    fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_columns(&Matrix::column(x))?.into_vec())
    }
}

/// Result of recording a forward pass on a [`Tape`].
pub struct Recorded {
    /// Parameter handles, in the order of [`Trainable::params`].
    pub params: Vec<Var>,
    /// Outputs, one column per input column.
    pub output: Var,
    /// Parameters subject to weight decay.
    pub decay: Vec<Var>,
}

/// A [`Model`] whose parameters can be trained by gradient descent.
pub trait Trainable: Model + Clone {
    fn record(&self, tape: &mut Tape, xs: &Matrix) -> Result<Recorded>;
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn forward_columns(&self, xs: &Matrix) -> Result<Matrix> {
        (**self).forward_columns(xs)
    }
    fn lipschitz_bound(&self) -> f64 {
        (**self).lipschitz_bound()
    }
}
