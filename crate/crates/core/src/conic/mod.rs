//! Conic program builder with one solve boundary.
//!
//! Variables are dense blocks; constraints are affine expressions grouped under labels so that an
//! infeasibility certificate can be mapped back to named constraint families.

mod expr;
#[cfg(feature = "solver")]
mod clarabel_backend;

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{dot, lin_comb, ExprMat, LinExpr};

pub const MAX_PSD_SIDE: usize = 10;
pub const AUDIT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("expression references undeclared variable index {0}")]
    UnknownVariable(usize),
    #[error("PSD block of side {side} exceeds the limit {limit}")]
    PsdTooLarge { side: usize, limit: usize },
    #[error("cone not supported by this build: {0}")]
    UnsupportedCone(String),
    #[error("no solver backend compiled in")]
    NoBackend,
    #[error("solver setup failed: {0}")]
    Setup(String),
}

/// A declared block of decision variables, stored column-major from `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarHandle {
    pub name: String,
    pub start: usize,
    pub rows: usize,
    pub cols: usize,
}

impl VarHandle {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        assert!(i < self.rows && j < self.cols, "{}[{i},{j}] out of range", self.name);
        self.start + j * self.rows + i
    }

    pub fn at(&self, i: usize, j: usize) -> LinExpr {
        LinExpr::var(self.index(i, j))
    }

    /// Element `k` of a vector block (column-major for matrices).
    pub fn get(&self, k: usize) -> LinExpr {
        assert!(k < self.len());
        LinExpr::var(self.start + k)
    }

    pub fn vec(&self) -> Vec<LinExpr> {
        (0..self.len()).map(|k| self.get(k)).collect()
    }

    pub fn mat(&self) -> ExprMat {
        ExprMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j))
    }

    pub fn sum(&self) -> LinExpr {
        LinExpr { terms: (0..self.len()).map(|k| (self.start + k, 1.0)).collect(), constant: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocConstraint {
    pub t: LinExpr,
    pub v: Vec<LinExpr>,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdConstraint {
    pub mat: ExprMat,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    vars: Vec<VarHandle>,
    nvars: usize,
    names: HashSet<String>,
    groups: Vec<String>,
    current_group: usize,
    eqs: Vec<(LinExpr, usize)>,
    ineqs: Vec<(LinExpr, usize)>,
    socs: Vec<SocConstraint>,
    psds: Vec<PsdConstraint>,
    objective: LinExpr,
}

impl Default for Program {
    fn default() -> Self {
        Program::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub solve_time: f64,
    pub max_violation: f64,
    pub raw_status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub values: BTreeMap<String, DMatrix<f64>>,
    pub objective_value: f64,
    pub stats: SolverStats,
    /// Constraint groups carrying weight in the infeasibility certificate.
    pub infeasible_groups: Vec<String>,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, h: &VarHandle) -> DMatrix<f64> {
        DMatrix::from_fn(h.rows, h.cols, |i, j| self.x[h.index(i, j)])
    }

    pub fn vector(&self, h: &VarHandle) -> Vec<f64> {
        self.x[h.start..h.start + h.len()].to_vec()
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.eval(&self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: u32,
    pub time_limit: f64,
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub verbose: bool,
    pub audit_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 300,
            time_limit: f64::INFINITY,
            tol_feas: 1e-8,
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            verbose: false,
            audit_tol: AUDIT_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Zero,
    Nonneg,
    Soc,
    PsdTriangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeBlock {
    pub kind: ConeKind,
    /// Row count for zero/nonneg/SOC; matrix side for PSD.
    pub dim: usize,
}

/// `min q'x  s.t.  A x + s = b, s in K`, with `A` as triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardForm {
    pub n: usize,
    pub m: usize,
    pub q: Vec<f64>,
    pub objective_constant: f64,
    pub a_triplets: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<ConeBlock>,
    pub row_groups: Vec<usize>,
}

#[derive(Serialize)]
struct Dump<'a> {
    variables: &'a [VarHandle],
    groups: &'a [String],
    #[serde(flatten)]
    form: &'a StandardForm,
}

fn check_refs(e: &LinExpr, nvars: usize) -> Result<(), ConicError> {
    match e.max_index() {
        Some(i) if i >= nvars => Err(ConicError::UnknownVariable(i)),
        _ => Ok(()),
    }
}

fn exprs_close(a: &LinExpr, b: &LinExpr) -> bool {
    let d = (a - b).compacted();
    let scale = 1.0 + a.terms.iter().chain(b.terms.iter()).map(|(_, v)| v.abs()).fold(a.constant.abs(), f64::max);
    d.terms.iter().all(|(_, v)| v.abs() <= 1e-9 * scale) && d.constant.abs() <= 1e-9 * scale
}

impl Program {
    pub fn new() -> Self {
        Program {
            vars: Vec::new(),
            nvars: 0,
            names: HashSet::new(),
            groups: vec!["default".to_string()],
            current_group: 0,
            eqs: Vec::new(),
            ineqs: Vec::new(),
            socs: Vec::new(),
            psds: Vec::new(),
            objective: LinExpr::zero(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    pub fn variables(&self) -> &[VarHandle] {
        &self.vars
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    /// Subsequent constraints are tagged with `name`.
    pub fn set_group(&mut self, name: &str) {
        self.current_group = match self.groups.iter().position(|g| g == name) {
            Some(i) => i,
            None => {
                self.groups.push(name.to_string());
                self.groups.len() - 1
            }
        };
    }

    pub fn declare(&mut self, name: &str, rows: usize, cols: usize) -> Result<VarHandle, ConicError> {
        if !self.names.insert(name.to_string()) {
            return Err(ConicError::DuplicateName(name.to_string()));
        }
        let h = VarHandle { name: name.to_string(), start: self.nvars, rows, cols };
        self.nvars += rows * cols;
        self.vars.push(h.clone());
        Ok(h)
    }

    pub fn declare_vec(&mut self, name: &str, len: usize) -> Result<VarHandle, ConicError> {
        self.declare(name, len, 1)
    }

    /// Vector block constrained elementwise nonnegative.
    pub fn declare_nonneg(&mut self, name: &str, rows: usize, cols: usize) -> Result<VarHandle, ConicError> {
        let h = self.declare(name, rows, cols)?;
        for k in 0..h.len() {
            self.add_ineq(-h.get(k))?;
        }
        Ok(h)
    }

    /// `e == 0`.
    pub fn add_eq(&mut self, e: LinExpr) -> Result<(), ConicError> {
        check_refs(&e, self.nvars)?;
        self.eqs.push((e.compacted(), self.current_group));
        Ok(())
    }

    /// `e <= 0`.
    pub fn add_ineq(&mut self, e: LinExpr) -> Result<(), ConicError> {
        check_refs(&e, self.nvars)?;
        self.ineqs.push((e.compacted(), self.current_group));
        Ok(())
    }

    /// `lhs <= rhs`.
    pub fn add_le(&mut self, lhs: LinExpr, rhs: LinExpr) -> Result<(), ConicError> {
        self.add_ineq(lhs - rhs)
    }

    pub fn add_eq_mat(&mut self, a: &ExprMat, b: &ExprMat) -> Result<(), ConicError> {
        if a.shape() != b.shape() {
            return Err(ConicError::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        for (x, y) in a.entries().iter().zip(b.entries()) {
            self.add_eq(x - y)?;
        }
        Ok(())
    }

    /// `||v||_2 <= t`.
    pub fn add_soc(&mut self, v: Vec<LinExpr>, t: LinExpr) -> Result<(), ConicError> {
        check_refs(&t, self.nvars)?;
        for e in &v {
            check_refs(e, self.nvars)?;
        }
        let v = v.into_iter().map(LinExpr::compacted).collect();
        self.socs.push(SocConstraint { t: t.compacted(), v, group: self.current_group });
        Ok(())
    }

    /// `m >= 0` in the semidefinite order; `m` must be symmetric.
    pub fn add_psd(&mut self, m: ExprMat) -> Result<(), ConicError> {
        let (r, c) = m.shape();
        if r != c {
            return Err(ConicError::ShapeMismatch(format!("PSD block {r}x{c}")));
        }
        if r > MAX_PSD_SIDE {
            return Err(ConicError::PsdTooLarge { side: r, limit: MAX_PSD_SIDE });
        }
        for e in m.entries() {
            check_refs(e, self.nvars)?;
        }
        for i in 0..r {
            for j in i + 1..r {
                if !exprs_close(m.get(i, j), m.get(j, i)) {
                    return Err(ConicError::ShapeMismatch(format!("PSD block not symmetric at ({i},{j})")));
                }
            }
        }
        let sym = ExprMat::from_fn(r, r, |i, j| m.get(i.min(j), i.max(j)).clone().compacted());
        self.psds.push(PsdConstraint { mat: sym, group: self.current_group });
        Ok(())
    }

    pub fn set_objective(&mut self, e: LinExpr) -> Result<(), ConicError> {
        check_refs(&e, self.nvars)?;
        self.objective = e.compacted();
        Ok(())
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn num_constraints(&self) -> usize {
        self.eqs.len() + self.ineqs.len() + self.socs.len() + self.psds.len()
    }

    /// Lower to standard form. Small or diagonal PSD blocks become LP/SOC rows; the rest need the
    /// native PSD cone.
    pub fn standard_form(&self, native_psd: bool) -> Result<StandardForm, ConicError> {
        let mut trip = Vec::new();
        let mut b = Vec::new();
        let mut groups = Vec::new();
        let mut cones: Vec<ConeBlock> = Vec::new();
        let mut row = 0usize;

        // Row for `s = coef_sign * e`: A = -coef_sign * coef, b = coef_sign * const.
        let mut push = |e: &LinExpr, sign: f64, g: usize, trip: &mut Vec<(usize, usize, f64)>, b: &mut Vec<f64>| {
            for (j, v) in &e.terms {
                trip.push((row, *j, -sign * v));
            }
            b.push(sign * e.constant);
            groups.push(g);
            row += 1;
        };

        if !self.eqs.is_empty() {
            for (e, g) in &self.eqs {
                push(e, -1.0, *g, &mut trip, &mut b);
            }
            cones.push(ConeBlock { kind: ConeKind::Zero, dim: self.eqs.len() });
        }

        let mut lin: Vec<(LinExpr, usize)> = self.ineqs.clone();
        let mut socs: Vec<SocConstraint> = self.socs.clone();
        let mut native: Vec<&PsdConstraint> = Vec::new();
        for p in &self.psds {
            let k = p.mat.nrows();
            let diagonal = (0..k).all(|i| (0..k).all(|j| i == j || p.mat.get(i, j).is_structurally_zero()));
            if k == 1 || diagonal {
                for i in 0..k {
                    lin.push((-p.mat.get(i, i).clone(), p.group));
                }
            } else if k == 2 {
                let (a, bb, c) = (p.mat.get(0, 0), p.mat.get(0, 1), p.mat.get(1, 1));
                socs.push(SocConstraint { t: a + c, v: vec![(a - c).compacted(), bb.scaled(2.0)], group: p.group });
            } else if native_psd {
                native.push(p);
            } else {
                return Err(ConicError::UnsupportedCone(format!("{k}x{k} PSD block")));
            }
        }

        if !lin.is_empty() {
            for (e, g) in &lin {
                push(e, -1.0, *g, &mut trip, &mut b);
            }
            cones.push(ConeBlock { kind: ConeKind::Nonneg, dim: lin.len() });
        }
        for s in &socs {
            push(&s.t, 1.0, s.group, &mut trip, &mut b);
            for e in &s.v {
                push(e, 1.0, s.group, &mut trip, &mut b);
            }
            cones.push(ConeBlock { kind: ConeKind::Soc, dim: 1 + s.v.len() });
        }
        for p in native {
            let k = p.mat.nrows();
            for j in 0..k {
                for i in 0..=j {
                    let scale = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                    push(&p.mat.get(i, j).scaled(scale), 1.0, p.group, &mut trip, &mut b);
                }
            }
            cones.push(ConeBlock { kind: ConeKind::PsdTriangle, dim: k });
        }

        let mut q = vec![0.0; self.nvars];
        for (j, v) in &self.objective.terms {
            q[*j] += v;
        }
        Ok(StandardForm {
            n: self.nvars,
            m: row,
            q,
            objective_constant: self.objective.constant,
            a_triplets: trip,
            b,
            cones,
            row_groups: groups,
        })
    }

    /// JSON description: variables, triplet-sparse constraint data, cone list.
    pub fn dump_json(&self) -> Result<String, ConicError> {
        let form = self.standard_form(true)?;
        let d = Dump { variables: &self.vars, groups: &self.groups, form: &form };
        serde_json::to_string_pretty(&d).map_err(|e| ConicError::Setup(e.to_string()))
    }

    /// Largest scaled violation of any constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (e, _) in &self.eqs {
            worst = worst.max(e.eval(x).abs() / (1.0 + e.magnitude(x)));
        }
        for (e, _) in &self.ineqs {
            worst = worst.max(e.eval(x).max(0.0) / (1.0 + e.magnitude(x)));
        }
        for s in &self.socs {
            let norm = s.v.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            let scale = 1.0 + s.t.magnitude(x) + s.v.iter().map(|e| e.magnitude(x)).sum::<f64>();
            worst = worst.max((norm - s.t.eval(x)).max(0.0) / scale);
        }
        for p in &self.psds {
            let m = p.mat.eval(x);
            let scale = 1.0 + p.mat.entries().iter().map(|e| e.magnitude(x)).fold(0.0, f64::max);
            let lmin = SymmetricEigen::new(m).eigenvalues.min();
            worst = worst.max((-lmin).max(0.0) / scale);
        }
        worst
    }

    pub fn solve(&self, cfg: &SolverConfig) -> Result<Solution, ConicError> {
        #[cfg(feature = "solver")]
        {
            clarabel_backend::solve(self, cfg)
        }
        #[cfg(not(feature = "solver"))]
        {
            let _ = cfg;
            Err(ConicError::NoBackend)
        }
    }

    #[cfg(any(test, feature = "solver"))]
    pub(crate) fn finish(&self, x: Vec<f64>, status: SolveStatus, stats: SolverStats, infeasible_groups: Vec<String>) -> Solution {
        let values = self.vars.iter().map(|h| (h.name.clone(), DMatrix::from_fn(h.rows, h.cols, |i, j| x[h.index(i, j)]))).collect();
        let objective_value = self.objective.eval(&x);
        Solution { status, x, values, objective_value, stats, infeasible_groups }
    }
}
