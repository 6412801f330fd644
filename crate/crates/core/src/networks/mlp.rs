use alloc::format;
use alloc::vec::Vec;

use super::normalizer::AffineNormalizer;
use super::{Model, Recorded, Trainable};
use crate::diffcore::{max_pair_quotient, spectral_norm, Activation, Matrix, Tape, SPECTRAL_TOL};
use crate::error::{Error, Result};
use crate::{math, rng};

/// Affine layer `W h + b`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseLayer {
    /// `n_out × n_in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Plain fully connected network used by the FCN and LRN baselines.
///
/// Hidden layers apply `activation`; the last layer is affine only. Inputs
/// pass through the same fixed normalizer the Lipschitz network uses.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    pub normalizer: AffineNormalizer,
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Slope of the LRN baseline's LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

impl Mlp {
    /// Random network with the given layer output sizes; the last entry is
    /// the output dimension. Uniform `±1/√fan_in` init for weights and biases.
    pub fn new(
        normalizer: AffineNormalizer,
        dims: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dimensions {dims:?} must be nonempty and nonzero"
            )));
        }
        let mut r = rng::stream(seed, rng::STREAM_INIT);
        let mut n_in = normalizer.dim();
        let mut layers = Vec::with_capacity(dims.len());
        for &n_out in dims {
            let k = 1.0 / math::sqrt(n_in as f64);
            let w = (0..n_out * n_in)
                .map(|_| rng::uniform(&mut r, -k, k))
                .collect();
            let bias = (0..n_out).map(|_| rng::uniform(&mut r, -k, k)).collect();
            layers.push(DenseLayer {
                weight: Matrix::new(n_out, n_in, w)?,
                bias,
            });
            n_in = n_out;
        }
        Ok(Mlp {
            normalizer,
            layers,
            activation,
        })
    }

    pub fn from_layers(
        normalizer: AffineNormalizer,
        layers: Vec<DenseLayer>,
        activation: Activation,
    ) -> Result<Self> {
        let mlp = Mlp {
            normalizer,
            layers,
            activation,
        };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("MLP without layers".into()));
        }
        let mut n = self.normalizer.dim();
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.cols() != n || l.bias.len() != l.weight.rows() {
                return Err(Error::shape(
                    "Mlp",
                    format!(
                        "layer {i}: weight {:?}, bias {}, incoming width {n}",
                        l.weight.shape(),
                        l.bias.len()
                    ),
                ));
            }
            n = l.weight.rows();
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_columns(&Matrix::column(x))?.into_vec())
    }

    pub fn forward_columns(&self, xs: &Matrix) -> Result<Matrix> {
        self.validate()?;
        if xs.rows() != self.normalizer.dim() {
            return Err(Error::shape(
                "mlp_forward",
                format!(
                    "inputs have {} rows, network expects {}",
                    xs.rows(),
                    self.normalizer.dim()
                ),
            ));
        }
        let mut h = self.normalizer.apply_columns(xs);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.matmul(&h);
            let (m, k) = z.shape();
            for r in 0..m {
                for c in 0..k {
                    let pre = z[(r, c)] + l.bias[r];
                    z[(r, c)] = if i < last { self.activation.apply(pre) } else { pre };
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Product of the spectral norms of every weight matrix and of `A_F`.
    ///
    /// A valid bound when the activation is 1-Lipschitz; looser than an SDP
    /// certificate.
    pub fn lipschitz_upper(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| spectral_norm(&l.weight, SPECTRAL_TOL))
            .product::<f64>()
            * self.normalizer.spectral_norm()
    }

    /// Largest pairwise quotient `‖net(x_i) − net(x_j)‖₂ / ‖x_i − x_j‖₂` on
    /// `batch` (columns). Pairs closer than `1e−12` are skipped; returns 0
    /// when no pair qualifies.
    pub fn batch_lipschitz_estimate(&self, batch: &Matrix) -> Result<f64> {
        if batch.cols() < 2 {
            return Err(Error::InvalidArgument(
                "batch Lipschitz estimate needs at least 2 points".into(),
            ));
        }
        let out = self.forward_columns(batch)?;
        Ok(max_pair_quotient(&out, batch, PAIR_MIN_DIST).map_or(0.0, |b| b.3))
    }
}

/// Pairs of inputs closer than this are ignored by batch Lipschitz estimates.
pub const PAIR_MIN_DIST: f64 = 1e-12;

impl Model for Mlp {
    fn input_dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    fn forward_columns(&self, xs: &Matrix) -> Result<Matrix> {
        Mlp::forward_columns(self, xs)
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_upper()
    }
}

impl Trainable for Mlp {
    fn record(&self, tape: &mut Tape, xs: &Matrix) -> Result<Recorded> {
        self.validate()?;
        let mut h = tape.constant(self.normalizer.apply_columns(xs));
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut decay = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.param(l.weight.clone());
            let b = tape.param(Matrix::column(&l.bias));
            params.push(w);
            params.push(b);
            decay.push(w);
            let z = tape.matmul(w, h);
            let z = tape.add_column(z, b);
            h = if i < last {
                tape.activation(z, self.activation)
            } else {
                z
            };
        }
        Ok(Recorded {
            params,
            output: h,
            decay,
        })
    }

    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
