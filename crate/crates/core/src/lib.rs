//! Lipschitz-bounded neural networks for nonlinear system identification.
//!
//! This crate is `no_std` (it needs `alloc`) and contains every numerical
//! piece of the toolkit:
//!
//! * [`diffcore`]: dense matrices, LU solves, power iteration, the Cayley
//!   transform and a reverse-mode [`diffcore::Tape`].
//! * [`networks`]: sandwich layers, the zero-at-zero [`networks::LipschitzNet`]
//!   and the plain [`networks::Mlp`] baseline.
//! * [`training`]: datasets, splitting, MSE and the clipped-SGD training loop.
//! * [`dynamics`]: benchmark simulators, RK4, noise, filtering and numerical
//!   differentiation.
//! * [`verification`]: k-d tree, lattice covers, certified estimation-error
//!   bounds and trajectory-deviation envelopes.
//!
//! File formats, the CLI and plotting live in the `lipsysid` companion crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diffcore;
pub mod dynamics;
mod error;
pub(crate) mod math;
pub mod networks;
pub mod rng;
pub mod training;
pub mod verification;

pub use error::{Error, Result};
