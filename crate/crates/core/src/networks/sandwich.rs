use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::SQRT_2;

use crate::diffcore::{cayley_stacked, Activation, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::{math, rng};

/// Free parameters of one 1-Lipschitz sandwich layer.
///
/// `(A, B)` come from the Cayley image of `(x, y)` and `Ψ = diag(exp(v))`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SandwichLayer {
    /// `n_out × n_out`
    pub x: Matrix,
    /// `n_in × n_out`
    pub y: Matrix,
    /// Log-scales of `Ψ`, length `n_out`.
    pub v: Vec<f64>,
    /// Bias, length `n_out`.
    pub b: Vec<f64>,
}

impl SandwichLayer {
    /// Gaussian `X`, `Y` with std `1/√n_in`; `Ψ = I`; zero bias.
    pub fn init(n_in: usize, n_out: usize, r: &mut rng::StreamRng) -> Self {
        let std = 1.0 / math::sqrt(n_in as f64);
        let mut gauss = |rows, cols| {
            let d = (0..rows * cols).map(|_| std * rng::normal(r)).collect();
            Matrix::new(rows, cols, d).expect("shape")
        };
        let x = gauss(n_out, n_out);
        let y = gauss(n_in, n_out);
        SandwichLayer {
            x,
            y,
            v: alloc::vec![0.0; n_out],
            b: alloc::vec![0.0; n_out],
        }
    }

    pub fn n_in(&self) -> usize {
        self.y.rows()
    }

    pub fn n_out(&self) -> usize {
        self.x.rows()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let n = self.n_out();
        if self.x.cols() != n || self.y.cols() != n || self.v.len() != n || self.b.len() != n {
            return Err(Error::shape(
                "SandwichLayer",
                format!(
                    "X {:?}, Y {:?}, v {}, b {}",
                    self.x.shape(),
                    self.y.shape(),
                    self.v.len(),
                    self.b.len()
                ),
            ));
        }
        Ok(())
    }

    /// Materializes `(A, B, Ψ, b)` through the Cayley transform.
    pub fn weights(&self) -> Result<SandwichWeights> {
        self.validate()?;
        let n = self.n_out();
        let (stacked, _) = cayley_stacked(&self.x, &self.y)?;
        Ok(SandwichWeights {
            at: stacked.row_slice(0, n),
            bt: stacked.row_slice(n, self.n_in()),
            v: self.v.clone(),
            bias: self.b.clone(),
        })
    }

    pub fn forward(&self, h: &[f64], act: Activation) -> Result<Vec<f64>> {
        self.weights()?.forward(h, act)
    }

    /// Records the layer on `tape`; returns the output and the parameter
    /// handles in `[X, Y, v, b]` order.
    pub(crate) fn record(&self, tape: &mut Tape, h: Var, act: Activation) -> Result<(Var, [Var; 4])> {
        let n = self.n_out();
        let px = tape.param(self.x.clone());
        let py = tape.param(self.y.clone());
        let pv = tape.param(Matrix::column(&self.v));
        let pb = tape.param(Matrix::column(&self.b));
        let stacked = tape.cayley(px, py)?;
        let at = tape.row_slice(stacked, 0, n);
        let bt = tape.row_slice(stacked, n, self.n_in());

        let z = tape.matmul_tn(bt, h);
        let neg_v = tape.scale(pv, -1.0);
        let psi_inv = tape.exp(neg_v);
        let in_scale = tape.scale(psi_inv, SQRT_2);
        let z = tape.row_scale(z, in_scale);
        let z = tape.add_column(z, pb);
        let s = tape.activation(z, act);
        let psi = tape.exp(pv);
        let out_scale = tape.scale(psi, SQRT_2);
        let s = tape.row_scale(s, out_scale);
        let out = tape.matmul(at, s);
        Ok((out, [px, py, pv, pb]))
    }
}

/// Explicit sandwich-layer weights.
///
/// `h_out = √2 Aᵀ Ψ σ(√2 Ψ⁻¹ B h_in + b)`. Built from a [`SandwichLayer`]
/// or injected directly; direct injection bypasses the `AAᵀ + BBᵀ = I`
/// guarantee.
#[derive(Clone, Debug, PartialEq)]
pub struct SandwichWeights {
    at: Matrix,
    bt: Matrix,
    v: Vec<f64>,
    bias: Vec<f64>,
}

impl SandwichWeights {
    /// `a` is `n_out × n_out`, `b` is `n_out × n_in`, `v` the log-scales of `Ψ`.
    pub fn new(a: &Matrix, b: &Matrix, v: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n || b.rows() != n || v.len() != n || bias.len() != n {
            return Err(Error::shape(
                "SandwichWeights::new",
                format!("A {:?}, B {:?}", a.shape(), b.shape()),
            ));
        }
        Ok(SandwichWeights {
            at: a.transpose(),
            bt: b.transpose(),
            v,
            bias,
        })
    }

    pub fn a(&self) -> Matrix {
        self.at.transpose()
    }

    pub fn b(&self) -> Matrix {
        self.bt.transpose()
    }

    pub fn n_in(&self) -> usize {
        self.bt.rows()
    }

    pub fn n_out(&self) -> usize {
        self.at.rows()
    }

    /// Applies the layer to every column of `h`.
    pub fn forward_columns(&self, h: &Matrix, act: Activation) -> Matrix {
        let mut z = self.bt.matmul_tn(h);
        let (n, k) = z.shape();
        for i in 0..n {
            let s = math::exp(-self.v[i]) * SQRT_2;
            let psi = math::exp(self.v[i]) * SQRT_2;
            for j in 0..k {
                let pre = z[(i, j)] * s + self.bias[i];
                z[(i, j)] = act.apply(pre) * psi;
            }
        }
        self.at.matmul(&z)
    }

    pub fn forward(&self, h: &[f64], act: Activation) -> Result<Vec<f64>> {
        if h.len() != self.n_in() {
            return Err(Error::shape(
                "sandwich_forward",
                format!("input has length {}, layer expects {}", h.len(), self.n_in()),
            ));
        }
        Ok(self.forward_columns(&Matrix::column(h), act).into_vec())
    }
}
