//! Cayley transform onto pairs `(A, B)` with `AAᵀ + BBᵀ = I`.
//!
//! For free `X` (`n×n`) and `Y` (`m×n`), with `Z = X − Xᵀ + YᵀY`:
//!
//! ```text
//! Aᵀ = (I + Z)⁻¹ (I − Z)
//! Bᵀ = −2 Y (I + Z)⁻¹
//! ```
//!
//! `I + Z` is a skew part plus a PSD part, so it is always invertible in
//! exact arithmetic; a failed factorization means the parameters overflowed.

use super::linalg::Lu;
use super::Matrix;
use crate::error::{Error, Result};

/// Intermediate state kept for the adjoint.
#[derive(Clone, Debug)]
pub struct CayleyCache {
    /// `(I + Z)⁻¹`
    pub minv: Matrix,
}

fn check_shapes(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != x.cols() || y.cols() != x.rows() {
        return Err(Error::shape(
            "cayley",
            alloc::format!(
                "X is {}x{}, Y is {}x{}; need X square and Y with X's column count",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            ),
        ));
    }
    Ok(())
}

/// Returns `[Aᵀ; Bᵀ]` stacked, shape `(n + m) × n`, plus the cache.
pub fn cayley_stacked(x: &Matrix, y: &Matrix) -> Result<(Matrix, CayleyCache)> {
    check_shapes(x, y)?;
    let n = x.rows();
    let m = y.rows();
    let mut i_plus_z = y.matmul_tn(y);
    for i in 0..n {
        for j in 0..n {
            i_plus_z[(i, j)] += x[(i, j)] - x[(j, i)];
        }
        i_plus_z[(i, i)] += 1.0;
    }
    let minv = Lu::factor(&i_plus_z)
        .map_err(|_| Error::Singular("cayley: I + Z"))?
        .inverse();
    if !minv.is_finite() {
        return Err(Error::Singular("cayley: I + Z"));
    }
    // (I+Z)⁻¹(I−Z) = 2(I+Z)⁻¹ − I
    let mut out = Matrix::zeros(n + m, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 2.0 * minv[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    let bt = y.matmul(&minv);
    for i in 0..m {
        for j in 0..n {
            out[(n + i, j)] = -2.0 * bt[(i, j)];
        }
    }
    Ok((out, CayleyCache { minv }))
}

/// `(A, B)` with `A` square `n×n` and `B` of shape `n×m`.
pub fn cayley(x: &Matrix, y: &Matrix) -> Result<(Matrix, Matrix)> {
    let (stacked, _) = cayley_stacked(x, y)?;
    let n = x.rows();
    let at = stacked.row_slice(0, n);
    let bt = stacked.row_slice(n, y.rows());
    Ok((at.transpose(), bt.transpose()))
}

/// Pulls adjoints of the stacked output `[Aᵀ; Bᵀ]` back to `(X̄, Ȳ)`.
pub fn cayley_stacked_adjoint(
    y: &Matrix,
    cache: &CayleyCache,
    g_stacked: &Matrix,
) -> (Matrix, Matrix) {
    let n = cache.minv.rows();
    let g_at = g_stacked.row_slice(0, n);
    let g_bt = g_stacked.row_slice(n, y.rows());
    let minv = &cache.minv;

    // Z̄ = M⁻ᵀ (−2 Ḡ_A + 2 Yᵀ Ḡ_B) M⁻ᵀ
    let inner = y.matmul_tn(&g_bt).sub(&g_at).scale(2.0);
    let z_bar = minv.matmul_tn(&inner).matmul_nt(minv);

    let mut x_bar = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            x_bar[(i, j)] = z_bar[(i, j)] - z_bar[(j, i)];
        }
    }
    // Ȳ = −2 Ḡ_B M⁻ᵀ + Y (Z̄ + Z̄ᵀ)
    let z_sym = z_bar.add(&z_bar.transpose());
    let y_bar = g_bt.matmul_nt(minv).scale(-2.0).add(&y.matmul(&z_sym));
    (x_bar, y_bar)
}

/// Adjoint of [`cayley`]: given `Ā`, `B̄` returns `(X̄, Ȳ)`.
pub fn cayley_adjoint(
    x: &Matrix,
    y: &Matrix,
    a_bar: &Matrix,
    b_bar: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let (_, cache) = cayley_stacked(x, y)?;
    let n = x.rows();
    let m = y.rows();
    if a_bar.shape() != (n, n) || b_bar.shape() != (n, m) {
        return Err(Error::shape(
            "cayley_adjoint",
            "cotangent shapes differ from the forward outputs".into(),
        ));
    }
    let mut g = Matrix::zeros(n + m, n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = a_bar[(j, i)];
        }
    }
    for i in 0..m {
        for j in 0..n {
            g[(n + i, j)] = b_bar[(j, i)];
        }
    }
    Ok(cayley_stacked_adjoint(y, &cache, &g))
}
