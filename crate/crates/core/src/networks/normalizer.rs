use alloc::format;
use alloc::vec::Vec;

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::math;

/// Fixed input map `F(x) = A_F (x − b_F)` with diagonal `A_F`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineNormalizer {
    /// Diagonal of `A_F`, all strictly positive.
    scale: Vec<f64>,
    /// `b_F`
    offset: Vec<f64>,
}

impl AffineNormalizer {
    pub fn new(scale: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if scale.len() != offset.len() {
            return Err(Error::shape(
                "AffineNormalizer::new",
                format!("scale has {} entries, offset {}", scale.len(), offset.len()),
            ));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "normalizer scale must be positive and finite, got {s}"
            )));
        }
        Ok(AffineNormalizer { scale, offset })
    }

    pub fn identity(n: usize) -> Self {
        AffineNormalizer {
            scale: alloc::vec![1.0; n],
            offset: alloc::vec![0.0; n],
        }
    }

    /// Per-coordinate standardization from the sample mean and the
    /// population (divide-by-N) standard deviation.
    pub fn fit<'a, I>(states: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let states: Vec<&[f64]> = states.into_iter().collect();
        if states.len() < 2 {
            return Err(Error::DegenerateData(format!(
                "need at least 2 samples to fit a normalizer, got {}",
                states.len()
            )));
        }
        let n = states[0].len();
        if states.iter().any(|s| s.len() != n) {
            return Err(Error::shape("fit_normalizer", "ragged states".into()));
        }
        let count = states.len() as f64;
        let mut mean = alloc::vec![0.0; n];
        for s in &states {
            for (m, x) in mean.iter_mut().zip(s.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = alloc::vec![0.0; n];
        for s in &states {
            for ((v, x), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut scale = Vec::with_capacity(n);
        for (j, v) in var.iter().enumerate() {
            let std = math::sqrt(v / count);
            if !(std > 0.0) || !std.is_finite() {
                return Err(Error::DegenerateData(format!(
                    "coordinate {j} has zero variance"
                )));
            }
            scale.push(1.0 / std);
        }
        Ok(AffineNormalizer {
            scale,
            offset: mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// `‖A_F‖₂`, exact for a diagonal map.
    pub fn spectral_norm(&self) -> f64 {
        self.scale.iter().fold(0.0, |m, &s| m.max(s))
    }

    pub fn matrix(&self) -> Matrix {
        Matrix::from_diag(&self.scale)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.scale)
            .zip(&self.offset)
            .map(|((x, s), b)| s * (x - b))
            .collect()
    }

    /// Applies the map to each column of `xs`.
    pub fn apply_columns(&self, xs: &Matrix) -> Matrix {
        let mut out = xs.clone();
        for i in 0..xs.rows() {
            let (s, b) = (self.scale[i], self.offset[i]);
            for j in 0..xs.cols() {
                out[(i, j)] = s * (xs[(i, j)] - b);
            }
        }
        out
    }
}
