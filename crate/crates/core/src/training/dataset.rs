use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::rng;

/// One `(x, y)` pair with its trajectory id and timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub traj: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Provenance carried alongside the samples.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetMeta {
    pub system: String,
    pub noise_variance: f64,
    pub rate_hz: f64,
    pub seed: u64,
    pub filter_window: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, meta: DatasetMeta) -> Result<Self> {
        let d = Dataset { samples, meta };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn output_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.y.len())
    }

    /// Consistent dimensions, finite values, unique `(traj, t)` keys.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.input_dim(), self.output_dim());
        let mut keys: Vec<(usize, u64)> = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != n || s.y.len() != m {
                return Err(Error::shape(
                    "Dataset",
                    format!("sample {i} has dims ({}, {}), expected ({n}, {m})", s.x.len(), s.y.len()),
                ));
            }
            if !s.t.is_finite() || s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
                return Err(Error::DegenerateData(format!("sample {i} is not finite")));
            }
            keys.push((s.traj, s.t.to_bits()));
        }
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DegenerateData(
                "duplicated (trajectory, timestamp) key".into(),
            ));
        }
        Ok(())
    }

    pub fn inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.x.as_slice())
    }

    /// Inputs of the selected samples as columns.
    pub fn input_columns(&self, idx: &[usize]) -> Matrix {
        Matrix::from_columns(self.input_dim(), idx.iter().map(|&i| self.samples[i].x.as_slice()))
    }

    pub fn label_columns(&self, idx: &[usize]) -> Matrix {
        Matrix::from_columns(self.output_dim(), idx.iter().map(|&i| self.samples[i].y.as_slice()))
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Number of inputs outside the box `bounds` (per-coordinate `(lo, hi)`).
    pub fn count_outside(&self, bounds: &[(f64, f64)]) -> usize {
        self.samples
            .iter()
            .filter(|s| s.x.iter().zip(bounds).any(|(v, (lo, hi))| v < lo || v > hi))
            .count()
    }
}

fn share(n: usize, fraction: f64) -> usize {
    crate::math::round(n as f64 * fraction) as usize
}

/// Seeded uniform shuffle, then `split_fraction` of the samples go to the
/// training set, which is then uniformly downsampled to `train_subsample`.
pub fn split_dataset(
    d: &Dataset,
    split_fraction: f64,
    train_subsample: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if d.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be in (0, 1), got {split_fraction}"
        )));
    }
    if !(train_subsample > 0.0 && train_subsample <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train subsample must be in (0, 1], got {train_subsample}"
        )));
    }
    let mut r = rng::stream(seed, rng::STREAM_SPLIT);
    let perm = rng::permutation(&mut r, d.len());
    let n_train = share(d.len(), split_fraction);
    if n_train == 0 || n_train == d.len() {
        return Err(Error::Empty("train/test partition"));
    }
    let (train_idx, test_idx) = perm.split_at(n_train);
    // The training part is already in uniformly random order, so a prefix is
    // a uniform downselection.
    let n_sub = share(train_idx.len(), train_subsample);
    if n_sub == 0 {
        return Err(Error::Empty("subsampled training set"));
    }
    Ok((d.subset(&train_idx[..n_sub]), d.subset(test_idx)))
}
