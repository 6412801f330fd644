use alloc::format;
use alloc::vec::Vec;

use super::kdtree::KdTree;
use super::lattice::{max_vertex_distance, LatticeGrid};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::math;
use crate::networks::Model;
use crate::training::Dataset;

/// Fallback neighbour count for lattices that contain no data.
pub const DEFAULT_Q: usize = 5;

/// Outcome of the lattice-based estimation error bound.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    /// Lipschitz bound of the model.
    pub gamma: f64,
    /// Lipschitz bound assumed for the true system.
    pub k: f64,
    pub c: f64,
    pub q: usize,
    pub grid: LatticeGrid,
    /// Per-lattice bound `e_i`, in grid order.
    pub per_lattice: Vec<f64>,
    /// `max_i e_i + c`.
    pub delta_bound: f64,
    /// Lattices answered from the nearest-neighbour fallback.
    pub fallback_count: usize,
    /// Filled in by callers that can read a clock.
    pub wall_time_s: Option<f64>,
}

impl VerifyReport {
    pub fn lattice_count(&self) -> usize {
        self.per_lattice.len()
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

/// `‖Φ(x_j) − y_j‖₂` for every sample.
pub fn residual_norms<M: Model + ?Sized>(model: &M, d: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(d.len());
    let idx: Vec<usize> = (0..d.len()).collect();
    for chunk in idx.chunks(4096) {
        let pred = model.forward_columns(&d.input_columns(chunk))?;
        for (c, &i) in chunk.iter().enumerate() {
            let y = &d.samples[i].y;
            let s: f64 = (0..y.len()).map(|r| sq(pred[(r, c)] - y[r])).sum();
            out.push(math::sqrt(s));
        }
    }
    Ok(out)
}

/// Bounds `sup_{x∈𝒳} ‖Φ(x) − f(x)‖₂` over the box covered by `grid`.
///
/// Per lattice, candidates are the samples inside it, or the `q` samples
/// nearest its center when it is empty; each candidate gives
/// `‖Φ(x_j) − y_j‖₂ + (K + γ)·max_vertex ‖x_j − v‖₂` and the lattice keeps
/// the smallest. `c` is added to the final maximum.
pub fn estimation_error_bound<M: Model + ?Sized>(
    model: &M,
    d: &Dataset,
    k: f64,
    grid: &LatticeGrid,
    q: usize,
    c: f64,
) -> Result<VerifyReport> {
    if d.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if q < 1 {
        return Err(Error::InvalidArgument("q must be at least 1".into()));
    }
    if !(k >= 0.0 && k.is_finite() && c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "K and c must be finite and non-negative, got K = {k}, c = {c}"
        )));
    }
    if d.input_dim() != grid.dim() || model.input_dim() != grid.dim() {
        return Err(Error::shape(
            "estimation_error_bound",
            format!(
                "data dim {}, model dim {}, grid dim {}",
                d.input_dim(),
                model.input_dim(),
                grid.dim()
            ),
        ));
    }
    let gamma = model.lipschitz_bound();
    let slope = k + gamma;
    let residual = residual_norms(model, d)?;
    let tree = KdTree::new(d.input_dim(), d.inputs());
    let mut per_lattice = Vec::with_capacity(grid.len());
    let mut fallback_count = 0;
    let mut hits = Vec::new();
    for i in 0..grid.len() {
        let (lo, hi) = grid.cell(i);
        hits.clear();
        tree.range_into(&lo, &hi, &mut hits);
        if hits.is_empty() {
            fallback_count += 1;
            let center = grid.center(i);
            hits.extend(tree.nearest(&center, q).into_iter().map(|(j, _)| j));
        }
        let e = hits
            .iter()
            .map(|&j| residual[j] + slope * max_vertex_distance(tree.point(j), &lo, &hi))
            .fold(f64::INFINITY, f64::min);
        if !e.is_finite() {
            return Err(Error::DegenerateData(format!("lattice {i} has a non-finite bound")));
        }
        per_lattice.push(e);
    }
    let delta_bound = per_lattice.iter().copied().fold(0.0, f64::max) + c;
    Ok(VerifyReport {
        gamma,
        k,
        c,
        q,
        grid: grid.clone(),
        per_lattice,
        delta_bound,
        fallback_count,
        wall_time_s: None,
    })
}

/// One set of a cover: a `p`-norm ball of radius `r`. Use
/// `f64::INFINITY` for the max-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub p: f64,
}

/// `c + max_i [n^{max(0, 1/2 − 1/p)}(K + γ)r_i + ‖e_i‖₂]` for a cover of
/// the state space with known errors `‖e_i‖₂` at the ball centers.
pub fn prop3_bound(cover: &[CoverBall], errors: &[f64], k: f64, gamma: f64, c: f64, n: usize) -> Result<f64> {
    if cover.is_empty() {
        return Err(Error::Empty("cover"));
    }
    if cover.len() != errors.len() {
        return Err(Error::shape(
            "prop3_bound",
            format!("{} balls but {} errors", cover.len(), errors.len()),
        ));
    }
    let mut worst = f64::NEG_INFINITY;
    for (ball, e) in cover.iter().zip(errors) {
        if !(ball.p >= 1.0) || !(ball.radius >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball needs p ≥ 1 and r ≥ 0, got p = {}, r = {}",
                ball.p, ball.radius
            )));
        }
        let exponent = (0.5 - 1.0 / ball.p).max(0.0);
        let factor = math::powf(n as f64, exponent);
        worst = worst.max(factor * (k + gamma) * ball.radius + e);
    }
    Ok(c + worst)
}

/// Pairs of inputs closer than this are skipped by [`empirical_lipschitz`].
pub const EMPIRICAL_MIN_DIST: f64 = 1e-9;

/// Largest `‖y_i − y_j‖₂ / ‖x_i − x_j‖₂` over each sample's `k` nearest
/// neighbours.
pub fn empirical_lipschitz(d: &Dataset, k_neighbors: usize) -> Result<f64> {
    if d.len() < 2 {
        return Err(Error::InvalidArgument(
            "empirical Lipschitz estimate needs at least 2 samples".into(),
        ));
    }
    if k_neighbors == 0 {
        return Err(Error::InvalidArgument("k_neighbors must be at least 1".into()));
    }
    let tree = KdTree::new(d.input_dim(), d.inputs());
    let min2 = EMPIRICAL_MIN_DIST * EMPIRICAL_MIN_DIST;
    let mut best: Option<f64> = None;
    for (i, s) in d.samples.iter().enumerate() {
        for (j, d2) in tree.nearest(&s.x, k_neighbors + 1) {
            if j == i || d2 < min2 {
                continue;
            }
            let dy = math::dist2(&s.y, &d.samples[j].y);
            let qt = dy / math::sqrt(d2);
            best = Some(best.map_or(qt, |b: f64| b.max(qt)));
        }
    }
    best.ok_or_else(|| Error::DegenerateData("all sample inputs coincide".into()))
}

/// `(a/γ)(e^{γt} − 1)`, or `a·t` when `γ = 0`.
pub fn trajectory_deviation_bound(a: f64, gamma: f64, t: f64) -> f64 {
    if gamma == 0.0 {
        a * t
    } else {
        a / gamma * math::expm1(gamma * t)
    }
}

/// Largest `‖Φ(x) − f(x)‖₂` over the given points, for checking bounds
/// against a known field.
pub fn sup_error_on<M, F>(model: &M, field: F, points: &Matrix) -> Result<f64>
where
    M: Model + ?Sized,
    F: Fn(&[f64]) -> Vec<f64>,
{
    let pred = model.forward_columns(points)?;
    let mut worst: f64 = 0.0;
    for c in 0..points.cols() {
        let f = field(&points.col(c));
        let s: f64 = f.iter().enumerate().map(|(r, v)| sq(pred[(r, c)] - v)).sum();
        worst = worst.max(math::sqrt(s));
    }
    Ok(worst)
}
