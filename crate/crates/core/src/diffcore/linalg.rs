use alloc::vec::Vec;

use super::Matrix;
use crate::error::{Error, Result};
use crate::{math, rng};

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    // Unit-lower L below the diagonal, U on and above it.
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Lu> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::shape(
                "lu",
                alloc::format!("{}x{} is not square", a.rows(), a.cols()),
            ));
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a
            .as_slice()
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !pivot.is_finite() || pivot <= scale * f64::EPSILON * n as f64 {
                return Err(Error::Singular("lu"));
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= f * u;
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.rows(), self.n, "lu solve: rhs rows");
        let m = b.cols();
        let mut x = Matrix::zeros(self.n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            for j in 0..m {
                x[(i, j)] = b[(p, j)];
            }
        }
        // L y = P b
        for i in 0..self.n {
            for k in 0..i {
                let l = self.lu[(i, k)];
                if l != 0.0 {
                    for j in 0..m {
                        let v = x[(k, j)];
                        x[(i, j)] -= l * v;
                    }
                }
            }
        }
        // U x = y
        for i in (0..self.n).rev() {
            for k in i + 1..self.n {
                let u = self.lu[(i, k)];
                if u != 0.0 {
                    for j in 0..m {
                        let v = x[(k, j)];
                        x[(i, j)] -= u * v;
                    }
                }
            }
            let d = self.lu[(i, i)];
            for j in 0..m {
                x[(i, j)] /= d;
            }
        }
        x
    }

    /// Solves `Aᵀ X = B`.
    pub fn solve_transpose(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.rows(), self.n, "lu solve_transpose: rhs rows");
        let m = b.cols();
        let mut x = b.clone();
        // Uᵀ z = b
        for i in 0..self.n {
            for k in 0..i {
                let u = self.lu[(k, i)];
                if u != 0.0 {
                    for j in 0..m {
                        let v = x[(k, j)];
                        x[(i, j)] -= u * v;
                    }
                }
            }
            let d = self.lu[(i, i)];
            for j in 0..m {
                x[(i, j)] /= d;
            }
        }
        // Lᵀ w = z
        for i in (0..self.n).rev() {
            for k in i + 1..self.n {
                let l = self.lu[(k, i)];
                if l != 0.0 {
                    for j in 0..m {
                        let v = x[(k, j)];
                        x[(i, j)] -= l * v;
                    }
                }
            }
        }
        // x = Pᵀ w
        let mut out = Matrix::zeros(self.n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            for j in 0..m {
                out[(p, j)] = x[(i, j)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.n))
    }
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != a.rows() {
        return Err(Error::shape(
            "solve",
            alloc::format!("rhs has {} rows, system has {}", b.rows(), a.rows()),
        ));
    }
    Ok(Lu::factor(a)?.solve(b))
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    Ok(Lu::factor(a)?.inverse())
}

pub const SPECTRAL_TOL: f64 = 1e-9;
pub const SPECTRAL_MAX_ITER: usize = 10_000;
const SPECTRAL_SEED: u64 = 0x5eed;

/// Largest singular value by power iteration on `MᵀM`.
///
/// Uses a fixed-seed start vector, so results are reproducible. A zero
/// matrix returns 0.
pub fn spectral_norm(m: &Matrix, tol: f64) -> f64 {
    spectral_norm_with(m, tol, SPECTRAL_MAX_ITER)
}

pub fn spectral_norm_with(m: &Matrix, tol: f64, max_iter: usize) -> f64 {
    let n = m.cols();
    if n == 0 || m.rows() == 0 || m.as_slice().iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut r = rng::stream(SPECTRAL_SEED, rng::STREAM_POWER);
    let mut v: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
    let nv = math::norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut sigma = 0.0;
    for _ in 0..max_iter {
        let mv = m.matvec(&v);
        let next_sigma = math::norm2(&mv);
        // w = Mᵀ M v
        let mut w = alloc::vec![0.0; n];
        for (i, &a) in mv.iter().enumerate() {
            for (wj, &mij) in w.iter_mut().zip(m.row(i)) {
                *wj += mij * a;
            }
        }
        let nw = math::norm2(&w);
        if nw == 0.0 {
            // v landed in the null space; the estimate is what we have.
            return next_sigma.max(sigma);
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        let converged = (next_sigma - sigma).abs() <= tol * next_sigma;
        sigma = next_sigma;
        if converged {
            break;
        }
    }
    // One more Rayleigh step so the returned value matches the final vector.
    math::norm2(&m.matvec(&v)).max(sigma)
}
