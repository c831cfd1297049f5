use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Affine scalar expression `sum_k c_k x_{idx_k} + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(idx: usize) -> Self {
        LinExpr { terms: vec![(idx, 1.0)], constant: 0.0 }
    }

    pub fn add_term(&mut self, idx: usize, c: f64) {
        if c != 0.0 {
            self.terms.push((idx, c));
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, c: f64) {
        if c == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|(i, v)| (*i, v * c)));
        self.constant += other.constant * c;
    }

    pub fn scaled(&self, c: f64) -> LinExpr {
        let mut out = LinExpr::zero();
        out.add_scaled(self, c);
        out
    }

    /// Sort by variable, merge duplicates, drop exact zeros.
    pub fn compact(&mut self) {
        if self.terms.len() < 2 {
            self.terms.retain(|(_, v)| *v != 0.0);
            return;
        }
        self.terms.sort_by_key(|(i, _)| *i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, v) in &self.terms {
            match out.last_mut() {
                Some((j, w)) if *j == i => *w += v,
                _ => out.push((i, v)),
            }
        }
        out.retain(|(_, v)| *v != 0.0);
        self.terms = out;
    }

    pub fn compacted(mut self) -> Self {
        self.compact();
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|(_, v)| *v == 0.0)
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.is_constant() && self.constant == 0.0
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(i, v)| v * x[*i]).sum::<f64>() + self.constant
    }

    /// Magnitude of the summands at `x`, used to scale audit residuals.
    pub fn magnitude(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(i, v)| (v * x[*i]).abs()).sum::<f64>() + self.constant.abs()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|(i, _)| *i).max()
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl AddAssign<&LinExpr> for LinExpr {
    fn add_assign(&mut self, rhs: &LinExpr) {
        self.add_scaled(rhs, 1.0);
    }
}

impl SubAssign<&LinExpr> for LinExpr {
    fn sub_assign(&mut self, rhs: &LinExpr) {
        self.add_scaled(rhs, -1.0);
    }
}

impl AddAssign<f64> for LinExpr {
    fn add_assign(&mut self, rhs: f64) {
        self.constant += rhs;
    }
}

impl Add<&LinExpr> for &LinExpr {
    type Output = LinExpr;
    fn add(self, rhs: &LinExpr) -> LinExpr {
        let mut o = self.clone();
        o += rhs;
        o
    }
}

impl Add<LinExpr> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self += &rhs;
        self
    }
}

impl Add<f64> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: f64) -> LinExpr {
        self.constant += rhs;
        self
    }
}

impl Sub<&LinExpr> for &LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: &LinExpr) -> LinExpr {
        let mut o = self.clone();
        o -= rhs;
        o
    }
}

impl Sub<LinExpr> for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self -= &rhs;
        self
    }
}

impl Sub<f64> for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: f64) -> LinExpr {
        self.constant -= rhs;
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for &LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scaled(rhs)
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scaled(rhs)
    }
}

/// Sum of `c_k * e_k`.
pub fn lin_comb<'a>(items: impl IntoIterator<Item = (f64, &'a LinExpr)>) -> LinExpr {
    let mut out = LinExpr::zero();
    for (c, e) in items {
        out.add_scaled(e, c);
    }
    out.compacted()
}

/// Dense matrix of affine expressions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprMat {
    rows: usize,
    cols: usize,
    data: Vec<LinExpr>,
}

impl ExprMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ExprMat { rows, cols, data: vec![LinExpr::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> LinExpr) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        ExprMat { rows, cols, data }
    }

    pub fn from_const(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| LinExpr::constant(m[(i, j)]))
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &LinExpr {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, e: LinExpr) {
        self.data[i * self.cols + j] = e;
    }

    pub fn entries(&self) -> &[LinExpr] {
        &self.data
    }

    /// `a * b`.
    pub fn lmul(a: &DMatrix<f64>, b: &ExprMat) -> ExprMat {
        assert_eq!(a.ncols(), b.rows, "lmul shape");
        ExprMat::from_fn(a.nrows(), b.cols, |i, j| lin_comb((0..a.ncols()).map(|k| (a[(i, k)], b.get(k, j)))))
    }

    /// `self * b`.
    pub fn rmul(&self, b: &DMatrix<f64>) -> ExprMat {
        assert_eq!(self.cols, b.nrows(), "rmul shape");
        ExprMat::from_fn(self.rows, b.ncols(), |i, j| lin_comb((0..self.cols).map(|k| (b[(k, j)], self.get(i, k)))))
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> Vec<LinExpr> {
        assert_eq!(self.cols, v.len(), "mul_vec shape");
        (0..self.rows).map(|i| lin_comb((0..self.cols).map(|k| (v[k], self.get(i, k))))).collect()
    }

    /// `w^T self` for a row weight vector.
    pub fn row_comb(&self, w: &[f64]) -> Vec<LinExpr> {
        assert_eq!(self.rows, w.len(), "row_comb shape");
        (0..self.cols).map(|j| lin_comb((0..self.rows).map(|i| (w[i], self.get(i, j))))).collect()
    }

    pub fn add(&self, other: &ExprMat) -> ExprMat {
        assert_eq!(self.shape(), other.shape(), "add shape");
        ExprMat::from_fn(self.rows, self.cols, |i, j| (self.get(i, j) + other.get(i, j)).compacted())
    }

    pub fn sub(&self, other: &ExprMat) -> ExprMat {
        assert_eq!(self.shape(), other.shape(), "sub shape");
        ExprMat::from_fn(self.rows, self.cols, |i, j| (self.get(i, j) - other.get(i, j)).compacted())
    }

    pub fn add_const(&self, m: &DMatrix<f64>) -> ExprMat {
        ExprMat::from_fn(self.rows, self.cols, |i, j| self.get(i, j).clone() + m[(i, j)])
    }

    pub fn columns(&self, start: usize, n: usize) -> ExprMat {
        ExprMat::from_fn(self.rows, n, |i, j| self.get(i, start + j).clone())
    }

    pub fn row(&self, i: usize) -> Vec<LinExpr> {
        (0..self.cols).map(|j| self.get(i, j).clone()).collect()
    }

    pub fn transpose(&self) -> ExprMat {
        ExprMat::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }
}

/// Dot product of constant weights with expressions.
pub fn dot(w: &[f64], e: &[LinExpr]) -> LinExpr {
    assert_eq!(w.len(), e.len(), "dot length");
    lin_comb(w.iter().copied().zip(e.iter()))
}
