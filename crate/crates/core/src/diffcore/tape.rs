//! Reverse-mode differentiation over dense matrices.
//!
//! Every value on the tape is a [`Matrix`]; vectors are `n×1` columns and
//! scalars are `1×1`. A batch of samples is stored column-wise. Operations
//! are appended in evaluation order and [`Tape::backward`] replays their
//! adjoints in reverse.

use alloc::vec::Vec;

use super::cayley::{cayley_stacked, cayley_stacked_adjoint, CayleyCache};
use super::linalg::Lu;
use super::Matrix;
use crate::error::Result;
use crate::math;

/// Scalar activation with slope restricted to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    Relu,
    /// `max(0, z) + slope·min(0, z)`
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `aᵀ b`
    MatMulTn(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Exp(Var),
    Act(Var, Activation),
    /// `m×k` plus an `m×1` column added to every column.
    AddColumn(Var, Var),
    /// `diag(d) · a` with `d` an `m×1` column.
    RowScale(Var, Var),
    /// Drops the last column and subtracts it from every remaining column.
    SubLastColumn(Var),
    RowSlice(Var, usize),
    /// `a⁻¹ b`
    Solve(Var, Var, Lu),
    /// Stacked `[Aᵀ; Bᵀ]` from `(X, Y)`.
    Cayley(Var, Var, CayleyCache),
    SumSquares(Var),
    /// Mean over columns of the squared column ℓ₂ distance to a constant.
    Mse(Var, Matrix),
    /// Largest pairwise quotient `‖o_i − o_j‖ / ‖x_i − x_j‖`; stores the
    /// active pair and its input distance.
    PairQuotient(Var, Option<(usize, usize, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes the adjoint, substituting zeros of the right shape when absent.
    pub fn take_or_zeros(&mut self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable input whose adjoint is collected.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no adjoint is propagated into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_tn(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulTn(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_with(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(math::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let v = self.value(a).map(|z| act.apply(z));
        let rg = self.rg(a);
        self.push(v, Op::Act(a, act), rg)
    }

    pub fn add_column(&mut self, a: Var, col: Var) -> Var {
        let (m, k) = self.value(a).shape();
        assert_eq!(self.value(col).shape(), (m, 1), "add_column: column shape");
        let mut v = self.value(a).clone();
        let c = self.value(col).as_slice();
        for i in 0..m {
            for j in 0..k {
                v[(i, j)] += c[i];
            }
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(v, Op::AddColumn(a, col), rg)
    }

    pub fn row_scale(&mut self, a: Var, d: Var) -> Var {
        let (m, k) = self.value(a).shape();
        assert_eq!(self.value(d).shape(), (m, 1), "row_scale: scale shape");
        let mut v = self.value(a).clone();
        let s = self.value(d).as_slice();
        for i in 0..m {
            for j in 0..k {
                v[(i, j)] *= s[i];
            }
        }
        let rg = self.rg(a) || self.rg(d);
        self.push(v, Op::RowScale(a, d), rg)
    }

    pub fn sub_last_column(&mut self, a: Var) -> Var {
        let (m, k) = self.value(a).shape();
        assert!(k >= 1, "sub_last_column: no columns");
        let src = self.value(a);
        let mut v = Matrix::zeros(m, k - 1);
        for i in 0..m {
            let last = src[(i, k - 1)];
            for j in 0..k - 1 {
                v[(i, j)] = src[(i, j)] - last;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::SubLastColumn(a), rg)
    }

    pub fn row_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).row_slice(start, len);
        let rg = self.rg(a);
        self.push(v, Op::RowSlice(a, start), rg)
    }

    /// `a⁻¹ b` for square `a`.
    pub fn solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let lu = Lu::factor(self.value(a))?;
        let v = lu.solve(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Solve(a, b, lu), rg))
    }

    /// Stacked `[Aᵀ; Bᵀ]` Cayley image of `(x, y)`.
    pub fn cayley(&mut self, x: Var, y: Var) -> Result<Var> {
        let (v, cache) = cayley_stacked(self.value(x), self.value(y))?;
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(v, Op::Cayley(x, y, cache), rg))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Matrix::column(&[self.value(a).sum_squares()]);
        let rg = self.rg(a);
        self.push(v, Op::SumSquares(a), rg)
    }

    /// `(1/k) Σ_j ‖pred[:, j] − target[:, j]‖²` for `k` columns.
    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse: shapes");
        let k = p.cols().max(1) as f64;
        let s: f64 = p
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(pred);
        self.push(
            Matrix::column(&[s / k]),
            Op::Mse(pred, target.clone()),
            rg,
        )
    }

    /// Maximum over column pairs of `‖out_i − out_j‖₂ / ‖x_i − x_j‖₂`,
    /// skipping pairs whose inputs are closer than `min_dist`.
    pub fn pair_quotient(&mut self, out: Var, inputs: &Matrix, min_dist: f64) -> Var {
        let o = self.value(out);
        assert_eq!(o.cols(), inputs.cols(), "pair_quotient: column counts");
        let best = max_pair_quotient(o, inputs, min_dist);
        let q = best.map_or(0.0, |(_, _, _, q)| q);
        let rg = self.rg(out);
        self.push(
            Matrix::column(&[q]),
            Op::PairQuotient(out, best.map(|(i, j, d, _)| (i, j, d))),
            rg,
        )
    }

    /// Adjoints of every node that `output` depends on. `output` must be 1×1.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward: scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::column(&[1.0]));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, value: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.rg(a) {
                    self.accumulate(grads, a, g.matmul_nt(self.value(b)));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, self.value(a).matmul_tn(g));
                }
            }
            &Op::MatMulTn(a, b) => {
                // out = aᵀ b: ā = b ḡᵀ, b̄ = a ḡ
                if self.rg(a) {
                    self.accumulate(grads, a, self.value(b).matmul_nt(g));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, self.value(a).matmul(g));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.scale(-1.0));
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    self.accumulate(grads, a, g.zip_with(self.value(b), |x, y| x * y));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, g.zip_with(self.value(a), |x, y| x * y));
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.scale(s)),
            &Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            &Op::Exp(a) => self.accumulate(grads, a, g.zip_with(value, |x, e| x * e)),
            &Op::Act(a, act) => {
                let pre = self.value(a);
                self.accumulate(grads, a, g.zip_with(pre, |x, z| x * act.derivative(z)));
            }
            &Op::AddColumn(a, col) => {
                self.accumulate(grads, a, g.clone());
                if self.rg(col) {
                    let sums: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                    self.accumulate(grads, col, Matrix::column(&sums));
                }
            }
            &Op::RowScale(a, d) => {
                let s = self.value(d).as_slice();
                if self.rg(a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for j in 0..ga.cols() {
                            ga[(i, j)] *= s[i];
                        }
                    }
                    self.accumulate(grads, a, ga);
                }
                if self.rg(d) {
                    let av = self.value(a);
                    let gd: Vec<f64> = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, d, Matrix::column(&gd));
                }
            }
            &Op::SubLastColumn(a) => {
                let (m, k) = self.value(a).shape();
                let mut ga = Matrix::zeros(m, k);
                for i in 0..m {
                    let mut total = 0.0;
                    for j in 0..k - 1 {
                        ga[(i, j)] = g[(i, j)];
                        total += g[(i, j)];
                    }
                    ga[(i, k - 1)] = -total;
                }
                self.accumulate(grads, a, ga);
            }
            &Op::RowSlice(a, start) => {
                let (m, k) = self.value(a).shape();
                let mut ga = Matrix::zeros(m, k);
                for i in 0..g.rows() {
                    for j in 0..k {
                        ga[(start + i, j)] = g[(i, j)];
                    }
                }
                self.accumulate(grads, a, ga);
            }
            Op::Solve(a, b, lu) => {
                // x = a⁻¹ b: b̄ = a⁻ᵀ x̄, ā = −b̄ xᵀ
                let b_bar = lu.solve_transpose(g);
                if self.rg(*a) {
                    self.accumulate(grads, *a, b_bar.matmul_nt(value).scale(-1.0));
                }
                self.accumulate(grads, *b, b_bar);
            }
            Op::Cayley(x, y, cache) => {
                let (xb, yb) = cayley_stacked_adjoint(self.value(*y), cache, g);
                self.accumulate(grads, *x, xb);
                self.accumulate(grads, *y, yb);
            }
            &Op::SumSquares(a) => {
                let s = 2.0 * g[(0, 0)];
                self.accumulate(grads, a, self.value(a).scale(s));
            }
            Op::Mse(pred, target) => {
                let p = self.value(*pred);
                let s = 2.0 * g[(0, 0)] / p.cols().max(1) as f64;
                self.accumulate(grads, *pred, p.zip_with(target, |a, b| s * (a - b)));
            }
            Op::PairQuotient(out, active) => {
                let o = self.value(*out);
                let mut go = Matrix::zeros(o.rows(), o.cols());
                if let &Some((i, j, dx)) = active {
                    let diff: Vec<f64> = (0..o.rows()).map(|r| o[(r, i)] - o[(r, j)]).collect();
                    let dn = math::norm2(&diff);
                    if dn > 0.0 {
                        let s = g[(0, 0)] / (dn * dx);
                        for (r, d) in diff.iter().enumerate() {
                            go[(r, i)] = s * d;
                            go[(r, j)] = -s * d;
                        }
                    }
                }
                self.accumulate(grads, *out, go);
            }
        }
    }
}

/// Active pair `(i, j, ‖x_i − x_j‖, quotient)` of the largest column-pair
/// quotient, or `None` when every pair is closer than `min_dist`.
pub fn max_pair_quotient(
    outputs: &Matrix,
    inputs: &Matrix,
    min_dist: f64,
) -> Option<(usize, usize, f64, f64)> {
    let k = inputs.cols();
    let xs: Vec<Vec<f64>> = (0..k).map(|j| inputs.col(j)).collect();
    let os: Vec<Vec<f64>> = (0..k).map(|j| outputs.col(j)).collect();
    let mut best: Option<(usize, usize, f64, f64)> = None;
    for i in 0..k {
        for j in i + 1..k {
            let dx = math::dist2(&xs[i], &xs[j]);
            if dx < min_dist {
                continue;
            }
            let q = math::dist2(&os[i], &os[j]) / dx;
            if best.map_or(true, |b| q > b.3) {
                best = Some((i, j, dx, q));
            }
        }
    }
    best
}
