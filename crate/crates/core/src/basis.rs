//! Nonlinear dictionary `S(x)`, remainder `Q(x) = S(x) - A_s x`, derivatives and Lipschitz envelopes.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::polytope::Polytope;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BasisError {
    #[error("invalid exponent in term {term}: {reason}")]
    InvalidExponent { term: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// A user-supplied scalar basis function with analytic derivatives.
pub trait CustomTerm: Send + Sync {
    fn name(&self) -> String;
    fn eval(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Clone)]
pub enum Term {
    Monomial(Vec<u32>),
    Custom(Arc<dyn CustomTerm>),
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Monomial(e) => write!(f, "Monomial({:?})", e),
            Term::Custom(c) => write!(f, "Custom({})", c.name()),
        }
    }
}

/// `H(x) = h0 + sum_c x_c * hc[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHessian {
    pub h0: DMatrix<f64>,
    pub hc: Vec<DMatrix<f64>>,
}

impl AffineHessian {
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.h0.clone();
        for (c, m) in self.hc.iter().enumerate() {
            h += m * x[c];
        }
        h
    }
}

fn powi(x: f64, k: u32) -> f64 {
    x.powi(k as i32)
}

fn monomial_eval(e: &[u32], x: &DVector<f64>) -> f64 {
    e.iter().enumerate().map(|(j, &k)| powi(x[j], k)).product()
}

/// Value of the monomial with exponents `e` after differentiating along `d` (list of coordinates).
fn monomial_deriv(e: &[u32], d: &[usize], x: &DVector<f64>) -> f64 {
    let mut e = e.to_vec();
    let mut coef = 1.0;
    for &j in d {
        if e[j] == 0 {
            return 0.0;
        }
        coef *= e[j] as f64;
        e[j] -= 1;
    }
    coef * monomial_eval(&e, x)
}

#[derive(Debug, Clone)]
pub struct BasisDictionary {
    n: usize,
    terms: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySpec {
    pub monomials: Vec<Vec<i64>>,
}

impl BasisDictionary {
    pub fn monomial_dictionary(exponents: &[Vec<i64>], n: usize) -> Result<Self, BasisError> {
        let mut terms = Vec::with_capacity(exponents.len());
        for (k, e) in exponents.iter().enumerate() {
            if e.len() != n {
                return Err(BasisError::InvalidExponent { term: k, reason: format!("expected {} entries", n) });
            }
            if e.iter().any(|v| *v < 0) {
                return Err(BasisError::InvalidExponent { term: k, reason: "negative entry".into() });
            }
            if e.iter().sum::<i64>() == 0 {
                return Err(BasisError::InvalidExponent { term: k, reason: "constant term".into() });
            }
            terms.push(Term::Monomial(e.iter().map(|v| *v as u32).collect()));
        }
        Ok(BasisDictionary { n, terms })
    }

    pub fn from_spec(spec: &DictionarySpec, n: usize) -> Result<Self, BasisError> {
        Self::monomial_dictionary(&spec.monomials, n)
    }

    pub fn spec(&self) -> Option<DictionarySpec> {
        let mut monomials = Vec::new();
        for t in &self.terms {
            match t {
                Term::Monomial(e) => monomials.push(e.iter().map(|v| *v as i64).collect()),
                Term::Custom(_) => return None,
            }
        }
        Some(DictionarySpec { monomials })
    }

    pub fn with_terms(n: usize, terms: Vec<Term>) -> Self {
        BasisDictionary { n, terms }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of terms N.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.terms.iter().map(|t| match t {
                Term::Monomial(e) => monomial_eval(e, x),
                Term::Custom(c) => c.eval(x),
            }),
        )
    }

    /// N × n Jacobian.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.len(), self.n);
        for (k, t) in self.terms.iter().enumerate() {
            let g = match t {
                Term::Monomial(e) => DVector::from_fn(self.n, |i, _| monomial_deriv(e, &[i], x)),
                Term::Custom(c) => c.gradient(x),
            };
            j.set_row(k, &g.transpose());
        }
        j
    }

    pub fn term_hessian(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.terms[k] {
            Term::Monomial(e) => DMatrix::from_fn(self.n, self.n, |a, b| monomial_deriv(e, &[a, b], x)),
            Term::Custom(c) => c.hessian(x),
        }
    }

    /// Affine-in-x Hessian of term `k`; `None` unless the term is a monomial of degree at most 3.
    pub fn term_affine_hessian(&self, k: usize) -> Option<AffineHessian> {
        let Term::Monomial(e) = &self.terms[k] else { return None };
        if e.iter().sum::<u32>() > 3 {
            return None;
        }
        let n = self.n;
        let zero = DVector::zeros(n);
        // third derivatives are constant for degree <= 3
        let h0 = DMatrix::from_fn(n, n, |a, b| monomial_deriv(e, &[a, b], &zero));
        let hc = (0..n).map(|c| DMatrix::from_fn(n, n, |a, b| monomial_deriv(e, &[a, b, c], &zero))).collect();
        Some(AffineHessian { h0, hc })
    }

    pub fn hessians_affine(&self) -> bool {
        (0..self.len()).all(|k| self.term_affine_hessian(k).is_some())
    }
}

#[derive(Debug, Clone)]
pub struct Remainder {
    dict: BasisDictionary,
    a_s: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEnvelope {
    pub per_component: Vec<f64>,
    /// Euclidean norm of `per_component`.
    pub scalar: f64,
    /// True when some component needed the sampled fallback.
    pub grid_fallback: bool,
}

pub const GRID_INFLATION: f64 = 1.05;

impl Remainder {
    pub fn new(dict: BasisDictionary) -> Self {
        let a_s = dict.jacobian(&DVector::zeros(dict.n()));
        Remainder { dict, a_s }
    }

    pub fn dictionary(&self) -> &BasisDictionary {
        &self.dict
    }

    pub fn a_s(&self) -> &DMatrix<f64> {
        &self.a_s
    }

    pub fn n(&self) -> usize {
        self.dict.n()
    }

    pub fn len(&self) -> usize {
        self.dict.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dict.is_empty()
    }

    pub fn q(&self, x: &DVector<f64>) -> DVector<f64> {
        self.dict.eval(x) - &self.a_s * x
    }

    pub fn q_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.dict.jacobian(x) - &self.a_s
    }

    pub fn term_hessian(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        self.dict.term_hessian(k, x)
    }

    pub fn term_hessians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (0..self.len()).map(|k| self.dict.term_hessian(k, x)).collect()
    }

    pub fn hessians_affine(&self) -> bool {
        self.dict.hessians_affine()
    }

    /// `sum_k w_k * d2 Q_k / dx2` at `x`.
    pub fn curvature_operator(&self, w: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n(), self.n());
        for k in 0..self.len() {
            if w[k] != 0.0 {
                h += self.dict.term_hessian(k, x) * w[k];
            }
        }
        h
    }

    pub fn curvature_affine(&self, w: &DVector<f64>) -> Option<AffineHessian> {
        let n = self.n();
        let mut out = AffineHessian { h0: DMatrix::zeros(n, n), hc: vec![DMatrix::zeros(n, n); n] };
        for k in 0..self.len() {
            let a = self.dict.term_affine_hessian(k)?;
            out.h0 += a.h0 * w[k];
            for c in 0..n {
                out.hc[c] += &a.hc[c] * w[k];
            }
        }
        Some(out)
    }

    fn is_linear_term(&self, k: usize) -> bool {
        matches!(&self.dict.terms()[k], Term::Monomial(e) if e.iter().sum::<u32>() == 1)
    }

    pub fn lipschitz_on(&self, p: &Polytope, grid_per_axis: usize) -> LipschitzEnvelope {
        let m = p.coordinate_bounds();
        let mut fallback = false;
        let mut grid: Option<Vec<DVector<f64>>> = None;
        let per_component: Vec<f64> = (0..self.len())
            .map(|k| match &self.dict.terms()[k] {
                _ if self.is_linear_term(k) => 0.0,
                Term::Monomial(e) => {
                    // |d/dx_i x^e| <= e_i prod_j m_j^(e - e_i)_j on any set inside the box |x_j| <= m_j
                    let g = DVector::from_fn(self.n(), |i, _| monomial_deriv(e, &[i], &m).abs());
                    g.norm()
                }
                Term::Custom(_) => {
                    fallback = true;
                    let pts = grid.get_or_insert_with(|| grid_points(p, grid_per_axis));
                    let sup = pts
                        .iter()
                        .map(|x| self.q_jacobian(x).row(k).norm())
                        .fold(0.0, f64::max);
                    sup * GRID_INFLATION
                }
            })
            .collect();
        let scalar = per_component.iter().map(|v| v * v).sum::<f64>().sqrt();
        LipschitzEnvelope { per_component, scalar, grid_fallback: fallback }
    }

    /// Upper bounds on `|Q_k(x)|` over the polytope.
    pub fn abs_bound_on(&self, p: &Polytope, grid_per_axis: usize) -> Vec<f64> {
        let m = p.coordinate_bounds();
        let mut grid: Option<Vec<DVector<f64>>> = None;
        (0..self.len())
            .map(|k| match &self.dict.terms()[k] {
                _ if self.is_linear_term(k) => 0.0,
                Term::Monomial(e) => monomial_eval(e, &m).abs(),
                Term::Custom(_) => {
                    let pts = grid.get_or_insert_with(|| grid_points(p, grid_per_axis));
                    pts.iter().map(|x| self.q(x)[k].abs()).fold(0.0, f64::max) * GRID_INFLATION
                }
            })
            .collect()
    }
}

/// Grid over the bounding box, filtered to the polytope, plus its vertices.
pub fn grid_points(p: &Polytope, per_axis: usize) -> Vec<DVector<f64>> {
    let (lo, hi) = p.bounding_box();
    let n = p.n();
    let per_axis = per_axis.max(2);
    let mut out: Vec<DVector<f64>> = p.vertices().vertices.clone();
    let mut idx = vec![0usize; n];
    loop {
        let x = DVector::from_fn(n, |j, _| lo[j] + (hi[j] - lo[j]) * idx[j] as f64 / (per_axis - 1) as f64);
        if p.contains(&x) {
            out.push(x);
        }
        let mut j = 0;
        loop {
            if j == n {
                return out;
            }
            idx[j] += 1;
            if idx[j] < per_axis {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}
