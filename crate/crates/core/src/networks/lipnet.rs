use alloc::format;
use alloc::vec::Vec;

use super::normalizer::AffineNormalizer;
use super::sandwich::{SandwichLayer, SandwichWeights};
use super::{Model, Recorded, Trainable};
use crate::diffcore::{cayley_stacked, Activation, Matrix, Tape};
use crate::error::{Error, Result};
use crate::{math, rng};

/// Network with an architectural Lipschitz bound `γ = γ'‖A_F‖₂`.
///
/// `Φ(x) = φ(x) − φ(0)` where `φ = γ' B_L ∘ h_{L−1} ∘ … ∘ h_1 ∘ F`, every
/// `h_i` a sandwich layer and `B_L` the `B` half of a Cayley pair. The
/// bound holds for any parameter values, so training cannot break it.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LipschitzNet {
    pub normalizer: AffineNormalizer,
    pub hidden: Vec<SandwichLayer>,
    /// `n_L × n_L` Cayley source of the final layer.
    pub final_x: Matrix,
    /// `n_{L−1} × n_L` Cayley source of the final layer.
    pub final_y: Matrix,
    pub gamma_prime: f64,
    pub activation: Activation,
}

impl LipschitzNet {
    /// Random network with hidden widths `widths` and output size `n_out`.
    pub fn new(
        normalizer: AffineNormalizer,
        widths: &[usize],
        n_out: usize,
        gamma_prime: f64,
        seed: u64,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || n_out == 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden widths {widths:?} and output size {n_out} must be nonzero"
            )));
        }
        check_gamma(gamma_prime)?;
        let mut r = rng::stream(seed, rng::STREAM_INIT);
        let mut hidden = Vec::with_capacity(widths.len());
        let mut n_in = normalizer.dim();
        for &w in widths {
            hidden.push(SandwichLayer::init(n_in, w, &mut r));
            n_in = w;
        }
        let std = 1.0 / math::sqrt(n_in as f64);
        let mut gauss = |rows, cols| {
            let d = (0..rows * cols).map(|_| std * rng::normal(&mut r)).collect();
            Matrix::new(rows, cols, d).expect("shape")
        };
        let final_x = gauss(n_out, n_out);
        let final_y = gauss(n_in, n_out);
        Ok(LipschitzNet {
            normalizer,
            hidden,
            final_x,
            final_y,
            gamma_prime,
            activation: Activation::Relu,
        })
    }

    /// Like [`LipschitzNet::new`] but picks `γ'` so that the certified bound
    /// equals `gamma`.
    pub fn with_bound(
        normalizer: AffineNormalizer,
        widths: &[usize],
        n_out: usize,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        let gp = gamma / normalizer.spectral_norm();
        Self::new(normalizer, widths, n_out, gp, seed)
    }

    pub fn output_dim(&self) -> usize {
        self.final_x.rows()
    }

    /// `γ'·max_j (A_F)_jj`, which equals `γ'‖A_F‖₂` for diagonal `A_F`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.gamma_prime * self.normalizer.spectral_norm()
    }

    pub fn validate(&self) -> Result<()> {
        let mut n_in = self.normalizer.dim();
        for (i, layer) in self.hidden.iter().enumerate() {
            layer.validate()?;
            if layer.n_in() != n_in {
                return Err(Error::shape(
                    "LipschitzNet",
                    format!("layer {i} takes {} inputs, previous width is {n_in}", layer.n_in()),
                ));
            }
            n_in = layer.n_out();
        }
        let n_l = self.final_x.rows();
        if self.final_x.cols() != n_l || self.final_y.shape() != (n_in, n_l) {
            return Err(Error::shape(
                "LipschitzNet",
                format!(
                    "final X {:?}, final Y {:?}, last hidden width {n_in}",
                    self.final_x.shape(),
                    self.final_y.shape()
                ),
            ));
        }
        check_gamma(self.gamma_prime)
    }

    /// Evaluates all Cayley transforms once.
    pub fn weights(&self) -> Result<LipNetWeights> {
        self.validate()?;
        let layers = self
            .hidden
            .iter()
            .map(SandwichLayer::weights)
            .collect::<Result<Vec<_>>>()?;
        let n_l = self.final_x.rows();
        let (stacked, _) = cayley_stacked(&self.final_x, &self.final_y)?;
        Ok(LipNetWeights {
            normalizer: self.normalizer.clone(),
            layers,
            blt: stacked.row_slice(n_l, self.final_y.rows()),
            gamma_prime: self.gamma_prime,
            activation: self.activation,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.weights()?.forward(x)
    }
}

fn check_gamma(gp: f64) -> Result<()> {
    if !(gp >= 0.0 && gp.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma' must be finite and non-negative, got {gp}"
        )));
    }
    Ok(())
}

/// A [`LipschitzNet`] with every Cayley transform evaluated, ready for
/// repeated forward passes. Can also be assembled from injected weights.
#[derive(Clone, Debug)]
pub struct LipNetWeights {
    normalizer: AffineNormalizer,
    layers: Vec<SandwichWeights>,
    /// `B_Lᵀ`
    blt: Matrix,
    gamma_prime: f64,
    activation: Activation,
}

impl LipNetWeights {
    pub fn new(
        normalizer: AffineNormalizer,
        layers: Vec<SandwichWeights>,
        b_last: &Matrix,
        gamma_prime: f64,
        activation: Activation,
    ) -> Result<Self> {
        let mut n = normalizer.dim();
        for l in &layers {
            if l.n_in() != n {
                return Err(Error::shape("LipNetWeights", "layer chain".into()));
            }
            n = l.n_out();
        }
        if b_last.cols() != n {
            return Err(Error::shape("LipNetWeights", "final layer width".into()));
        }
        Ok(LipNetWeights {
            normalizer,
            layers,
            blt: b_last.transpose(),
            gamma_prime,
            activation,
        })
    }

    pub fn b_last(&self) -> Matrix {
        self.blt.transpose()
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.gamma_prime * self.normalizer.spectral_norm()
    }

    /// `Φ` applied to each column of `xs` (`n × k`), returning `n_L × k`.
    pub fn forward_columns(&self, xs: &Matrix) -> Result<Matrix> {
        let n = self.normalizer.dim();
        if xs.rows() != n {
            return Err(Error::shape(
                "net_forward",
                format!("inputs have {} rows, network expects {n}", xs.rows()),
            ));
        }
        // Inputs plus the image of the origin as the last column, so both
        // pass through identical arithmetic and Φ(0) is exactly zero.
        let k = xs.cols();
        let mut h = Matrix::zeros(n, k + 1);
        let f0 = self.normalizer.apply(&alloc::vec![0.0; n]);
        let fx = self.normalizer.apply_columns(xs);
        for i in 0..n {
            for j in 0..k {
                h[(i, j)] = fx[(i, j)];
            }
            h[(i, k)] = f0[i];
        }
        for layer in &self.layers {
            h = layer.forward_columns(&h, self.activation);
        }
        let out = self.blt.matmul_tn(&h).scale(self.gamma_prime);
        let m = out.rows();
        let mut phi = Matrix::zeros(m, k);
        for i in 0..m {
            let zero = out[(i, k)];
            for j in 0..k {
                phi[(i, j)] = out[(i, j)] - zero;
            }
        }
        Ok(phi)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_columns(&Matrix::column(x))?.into_vec())
    }
}

impl Model for LipNetWeights {
    fn input_dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn output_dim(&self) -> usize {
        self.blt.cols()
    }

    fn forward_columns(&self, xs: &Matrix) -> Result<Matrix> {
        LipNetWeights::forward_columns(self, xs)
    }

    fn lipschitz_bound(&self) -> f64 {
        LipNetWeights::lipschitz_bound(self)
    }
}

impl Model for LipschitzNet {
    fn input_dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn output_dim(&self) -> usize {
        self.final_x.rows()
    }

    fn forward_columns(&self, xs: &Matrix) -> Result<Matrix> {
        self.weights()?.forward_columns(xs)
    }

    fn lipschitz_bound(&self) -> f64 {
        LipschitzNet::lipschitz_bound(self)
    }
}

impl Trainable for LipschitzNet {
    fn record(&self, tape: &mut Tape, xs: &Matrix) -> Result<Recorded> {
        self.validate()?;
        let n = self.normalizer.dim();
        let k = xs.cols();
        let mut h0 = Matrix::zeros(n, k + 1);
        let fx = self.normalizer.apply_columns(xs);
        let f0 = self.normalizer.apply(&alloc::vec![0.0; n]);
        for i in 0..n {
            for j in 0..k {
                h0[(i, j)] = fx[(i, j)];
            }
            h0[(i, k)] = f0[i];
        }
        let mut h = tape.constant(h0);
        let mut params = Vec::with_capacity(4 * self.hidden.len() + 2);
        for layer in &self.hidden {
            let (out, p) = layer.record(tape, h, self.activation)?;
            params.extend_from_slice(&p);
            h = out;
        }
        let px = tape.param(self.final_x.clone());
        let py = tape.param(self.final_y.clone());
        params.push(px);
        params.push(py);
        let n_l = self.final_x.rows();
        let stacked = tape.cayley(px, py)?;
        let blt = tape.row_slice(stacked, n_l, self.final_y.rows());
        let out = tape.matmul_tn(blt, h);
        let out = tape.scale(out, self.gamma_prime);
        let output = tape.sub_last_column(out);
        Ok(Recorded {
            params,
            output,
            decay: Vec::new(),
        })
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = Vec::new();
        for l in &self.hidden {
            p.push(l.x.as_slice());
            p.push(l.y.as_slice());
            p.push(&l.v);
            p.push(&l.b);
        }
        p.push(self.final_x.as_slice());
        p.push(self.final_y.as_slice());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.hidden {
            p.push(l.x.as_mut_slice());
            p.push(l.y.as_mut_slice());
            p.push(&mut l.v);
            p.push(&mut l.b);
        }
        p.push(self.final_x.as_mut_slice());
        p.push(self.final_y.as_mut_slice());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dist2;
    use core::f64::consts::FRAC_1_SQRT_2;

    fn random_net(seed: u64) -> LipschitzNet {
        let f = AffineNormalizer::new(alloc::vec![0.7, 1.3], alloc::vec![0.2, -0.4]).unwrap();
        let mut net = LipschitzNet::new(f, &[8, 8], 2, 1.5, seed).unwrap();
        let mut r = rng::stream(seed, 99);
        for l in &mut net.hidden {
            l.v.iter_mut().for_each(|v| *v = 0.5 * rng::normal(&mut r));
            l.b.iter_mut().for_each(|b| *b = rng::normal(&mut r));
        }
        net
    }

    #[test]
    fn zero_maps_to_exact_zero() {
        for seed in 0..10 {
            let out = random_net(seed).forward(&[0.0, 0.0]).unwrap();
            assert!(out.iter().all(|&v| v == 0.0), "{out:?}");
        }
    }

    #[test]
    fn injected_identity_net_is_relu() {
        let h = Matrix::column(&[FRAC_1_SQRT_2]);
        let layer = SandwichWeights::new(&h, &h, alloc::vec![0.0], alloc::vec![0.0]).unwrap();
        let net = LipNetWeights::new(
            AffineNormalizer::identity(1),
            alloc::vec![layer],
            &Matrix::identity(1),
            1.0,
            Activation::Relu,
        )
        .unwrap();
        assert!((net.forward(&[2.5]).unwrap()[0] - 2.5).abs() < 1e-12);
        assert_eq!(net.forward(&[-2.5]).unwrap()[0], 0.0);
    }

    #[test]
    fn bound_from_gamma_prime_and_normalizer() {
        let mut net = random_net(1);
        net.gamma_prime = 2.01;
        net.normalizer = AffineNormalizer::identity(2);
        assert_eq!(net.lipschitz_bound(), 2.01);
        net.normalizer = AffineNormalizer::new(alloc::vec![2.0, 0.5], alloc::vec![0.0; 2]).unwrap();
        net.gamma_prime = 1.0;
        assert_eq!(net.lipschitz_bound(), 2.0);
        net.gamma_prime = 0.0;
        assert_eq!(net.lipschitz_bound(), 0.0);
    }

    #[test]
    fn with_bound_folds_in_normalizer() {
        let f = AffineNormalizer::new(alloc::vec![0.5, 0.8], alloc::vec![0.0; 2]).unwrap();
        let net = LipschitzNet::with_bound(f, &[4], 2, 2.01, 0).unwrap();
        assert!((net.lipschitz_bound() - 2.01).abs() < 1e-15);
    }

    #[test]
    fn empirical_quotient_respects_bound() {
        let net = random_net(3);
        let w = net.weights().unwrap();
        let gamma = net.lipschitz_bound();
        let mut r = rng::stream(7, 0);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..2).map(|_| rng::uniform(&mut r, -10.0, 10.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| rng::uniform(&mut r, -10.0, 10.0)).collect();
            let q = dist2(&w.forward(&a).unwrap(), &w.forward(&b).unwrap()) / dist2(&a, &b);
            assert!(q <= gamma + 1e-7, "{q} > {gamma}");
        }
    }

    #[test]
    fn tape_and_direct_forward_agree() {
        let net = random_net(4);
        let xs = Matrix::from_rows(&[&[0.1, -1.0, 2.0], &[0.3, 0.0, -2.0]]).unwrap();
        let direct = net.weights().unwrap().forward_columns(&xs).unwrap();
        let mut tape = Tape::new();
        let rec = net.record(&mut tape, &xs).unwrap();
        assert_eq!(tape.value(rec.output), &direct);
        assert_eq!(rec.params.len(), net.params().len());
    }

    #[test]
    fn mismatched_shapes_fail_validation() {
        let mut net = random_net(0);
        net.final_y = Matrix::zeros(3, 2);
        assert!(net.validate().is_err());
        assert!(LipschitzNet::new(AffineNormalizer::identity(2), &[], 2, 1.0, 0).is_err());
    }
}
