use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Regular grid of ℓ∞ balls covering a box.
///
/// Ball `i` has radius `δ_d` in dimension `d`; centers sit at
/// `lo_d + (2k + 1)δ_d`, so neighbouring balls share faces and the last
/// ball may overhang `hi_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGrid {
    bounds: Vec<(f64, f64)>,
    delta: Vec<f64>,
    counts: Vec<usize>,
}

/// Ratios within this relative distance of an integer are treated as that
/// integer, so `6 / 0.1` gives 60 cells rather than 61.
const COUNT_SLACK: f64 = 1e-9;

impl LatticeGrid {
    /// Same radius in every dimension.
    pub fn new(bounds: &[(f64, f64)], delta: f64) -> Result<Self> {
        Self::with_deltas(bounds, &alloc::vec![delta; bounds.len()])
    }

    pub fn with_deltas(bounds: &[(f64, f64)], delta: &[f64]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != delta.len() {
            return Err(Error::InvalidArgument(format!(
                "need one radius per dimension, got {} bounds and {} radii",
                bounds.len(),
                delta.len()
            )));
        }
        let mut counts = Vec::with_capacity(bounds.len());
        for (&(lo, hi), &d) in bounds.iter().zip(delta) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "state space must be a bounded box, got [{lo}, {hi}]"
                )));
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("lattice radius must be positive, got {d}")));
            }
            let ratio = (hi - lo) / (2.0 * d);
            let c = math::ceil(ratio - COUNT_SLACK * ratio.max(1.0)).max(1.0);
            counts.push(c as usize);
        }
        Ok(LatticeGrid {
            bounds: bounds.to_vec(),
            delta: delta.to_vec(),
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// Cells per dimension.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Total number of lattices `N_l`.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center of lattice `i` in row-major order (last dimension fastest).
    pub fn center(&self, mut i: usize) -> Vec<f64> {
        let mut c = alloc::vec![0.0; self.dim()];
        for d in (0..self.dim()).rev() {
            let k = i % self.counts[d];
            i /= self.counts[d];
            c[d] = self.bounds[d].0 + (2 * k + 1) as f64 * self.delta[d];
        }
        c
    }

    /// Lower and upper corners of lattice `i`.
    ///
    /// Edges are measured from the lower bound, and a last edge that lands on
    /// the upper bound is snapped to it, so boundary vertices are exact for
    /// every radius.
    pub fn cell(&self, mut i: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim();
        let (mut lo, mut hi) = (alloc::vec![0.0; n], alloc::vec![0.0; n]);
        for d in (0..n).rev() {
            let k = i % self.counts[d];
            i /= self.counts[d];
            let (b0, b1) = self.bounds[d];
            lo[d] = b0 + (2 * k) as f64 * self.delta[d];
            let edge = b0 + (2 * k + 2) as f64 * self.delta[d];
            let snap = k + 1 == self.counts[d] && (edge - b1).abs() <= COUNT_SLACK * (b1 - b0).max(1.0);
            hi[d] = if snap { b1 } else { edge };
        }
        (lo, hi)
    }

    /// Index of a lattice containing `x`, if `x` lies in the covered region.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for d in 0..self.dim() {
            let rel = (x[d] - self.bounds[d].0) / (2.0 * self.delta[d]);
            if !(rel >= 0.0) {
                return None;
            }
            let k = (math::floor(rel) as usize).min(self.counts[d] - 1);
            if rel > (k + 1) as f64 {
                return None;
            }
            idx = idx * self.counts[d] + k;
        }
        Some(idx)
    }
}

/// `max_k ‖x − v_k‖₂` over the `2ⁿ` vertices of the box `[lo, hi]`.
///
/// The farthest vertex picks the farther face in every coordinate
/// independently, so the maximum is computed without enumeration.
pub fn max_vertex_distance(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let s: f64 = x
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| {
            let d = (x - l).abs().max((x - h).abs());
            d * d
        })
        .sum();
    math::sqrt(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn counts() {
        let b = [(-3.0, 3.0); 2];
        assert_eq!(LatticeGrid::new(&b, 0.05).unwrap().len(), 3600);
        assert_eq!(LatticeGrid::new(&b, 0.025).unwrap().len(), 4 * 3600);
        let one = LatticeGrid::new(&[(0.0, 0.1)], 0.05).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one.center(0)[0] - 0.05).abs() < 1e-15);
        let per_dim = LatticeGrid::with_deltas(&[(0.0, 1.0), (0.0, 1.0)], &[0.5, 0.25]).unwrap();
        assert_eq!(per_dim.counts(), &[1, 2]);
    }

    #[test]
    fn boundary_vertices_are_exact() {
        let b = [(-3.0, 3.0); 2];
        for delta in [0.05, 0.025, 0.1, 0.07] {
            let g = LatticeGrid::new(&b, delta).unwrap();
            let (lo, _) = g.cell(0);
            let (_, hi) = g.cell(g.len() - 1);
            assert_eq!(lo, [-3.0, -3.0]);
            if delta != 0.07 {
                assert_eq!(hi, [3.0, 3.0]);
            }
        }
        let coarse = LatticeGrid::new(&b, 0.05).unwrap();
        let fine = LatticeGrid::new(&b, 0.025).unwrap();
        for i in 0..coarse.len() {
            let (r, c) = (i / 60, i % 60);
            let (lo, hi) = coarse.cell(i);
            let (flo, _) = fine.cell(2 * r * 120 + 2 * c);
            let (_, fhi) = fine.cell((2 * r + 1) * 120 + 2 * c + 1);
            assert_eq!((lo, hi), (flo, fhi));
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(LatticeGrid::new(&[(0.0, f64::INFINITY)], 0.1).is_err());
        assert!(LatticeGrid::new(&[(0.0, 1.0)], 0.0).is_err());
        assert!(LatticeGrid::with_deltas(&[(0.0, 1.0)], &[0.1, 0.1]).is_err());
    }

    #[test]
    fn cover_contains_corners_and_samples() {
        let b = [(-3.0, 3.0), (-2.5, 1.0)];
        let g = LatticeGrid::new(&b, 0.07).unwrap();
        let inside = |i: usize, x: &[f64]| {
            let (lo, hi) = g.cell(i);
            x.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| v >= l && v <= h)
        };
        for x in [[-3.0, -2.5], [-3.0, 1.0], [3.0, -2.5], [3.0, 1.0]] {
            assert!(inside(g.locate(&x).unwrap(), &x));
        }
        let mut r = rng::stream(3, 0);
        for _ in 0..20_000 {
            let x = [rng::uniform(&mut r, -3.0, 3.0), rng::uniform(&mut r, -2.5, 1.0)];
            assert!(inside(g.locate(&x).unwrap(), &x));
        }
    }

    #[test]
    fn vertex_distance_matches_enumeration() {
        let mut r = rng::stream(4, 0);
        for _ in 0..200 {
            let lo: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -1.0, 0.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng::uniform(&mut r, 0.0, 1.0)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let mut best: f64 = 0.0;
            for mask in 0..8 {
                let v: Vec<f64> = (0..3).map(|d| if mask >> d & 1 == 1 { hi[d] } else { lo[d] }).collect();
                best = best.max(math::dist2(&x, &v));
            }
            assert!((max_vertex_distance(&x, &lo, &hi) - best).abs() < 1e-14);
        }
        let c = max_vertex_distance(&[0.0, 0.0], &[-0.05, -0.05], &[0.05, 0.05]);
        assert!((c - 0.05 * math::sqrt(2.0)).abs() < 1e-15);
    }
}
