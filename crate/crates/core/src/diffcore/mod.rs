//! Dense matrix numerics and reverse-mode gradients.

mod cayley;
pub mod linalg;
mod matrix;
mod tape;

pub use cayley::{cayley, cayley_adjoint, cayley_stacked, cayley_stacked_adjoint, CayleyCache};
pub use linalg::{inverse, solve, spectral_norm, spectral_norm_with, Lu, SPECTRAL_TOL};
pub use matrix::Matrix;
pub use tape::{max_pair_quotient, Activation, Gradients, Tape, Var};
