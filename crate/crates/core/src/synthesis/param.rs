use nalgebra::{DMatrix, DVector};

use crate::conic::{ExprMat, LinExpr, Program, Solution, SolveStatus, VarHandle};
use crate::plant_data::{closed_loop_rep, nullspace, ClosedLoopRep, DataError, ExperimentData};
use crate::runtime::GainPair;

use super::SynthesisError;

/// All right inverses of `V0`, written as `G = (G0 + N Z) diag(1/s)` where `s` holds the row norms
/// of `V0`, `G0` is the pseudo-inverse of the row-normalized data and `N` spans its nullspace.
#[derive(Debug, Clone)]
pub struct DataParam {
    z: Option<VarHandle>,
    g0: DMatrix<f64>,
    null: DMatrix<f64>,
    inv_scale: DVector<f64>,
    n: usize,
    nq: usize,
}

impl DataParam {
    pub fn declare(prog: &mut Program, data: &ExperimentData) -> Result<Self, SynthesisError> {
        let (n, nq) = (data.n(), data.nq());
        if data.rank_v0() < n + nq {
            return Err(SynthesisError::InvalidSpec(format!(
                "V0 has rank {} but needs full row rank {}",
                data.rank_v0(),
                n + nq
            )));
        }
        let s = DVector::from_fn(n + nq, |i, _| data.v0.row(i).norm().max(1e-300));
        let inv_scale = s.map(|v| 1.0 / v);
        let vt = DMatrix::from_fn(n + nq, data.t, |i, j| data.v0[(i, j)] * inv_scale[i]);
        let g0 = vt.clone().pseudo_inverse(1e-12).map_err(|e| SynthesisError::InvalidSpec(e.to_string()))?;
        let null = nullspace(&vt);
        let z = if null.ncols() > 0 { Some(prog.declare("Z", null.ncols(), n + nq)?) } else { None };
        Ok(DataParam { z, g0, null, inv_scale, n, nq })
    }

    /// `a G` as an expression; `a` has `T` columns.
    pub fn times(&self, a: &DMatrix<f64>) -> ExprMat {
        let base = a * &self.g0;
        let an = a * &self.null;
        let cols = self.n + self.nq;
        ExprMat::from_fn(a.nrows(), cols, |i, j| {
            let mut e = LinExpr::constant(base[(i, j)]);
            if let Some(z) = &self.z {
                for k in 0..an.ncols() {
                    if an[(i, k)] != 0.0 {
                        e.add_term(z.index(k, j), an[(i, k)]);
                    }
                }
            }
            e.scaled(self.inv_scale[j])
        })
    }

    pub fn times_g1(&self, a: &DMatrix<f64>) -> ExprMat {
        self.times(a).columns(0, self.n)
    }

    pub fn times_g2(&self, a: &DMatrix<f64>) -> ExprMat {
        self.times(a).columns(self.n, self.nq)
    }

    /// The closed-loop matrices `(M1, M2) = (X1 G1, X1 G2)`.
    pub fn closed_loop(&self, data: &ExperimentData) -> (ExprMat, ExprMat) {
        let m = self.times(&data.x1);
        (m.columns(0, self.n), m.columns(self.n, self.nq))
    }

    /// The gains `(K1, K2) = (U0 G1, U0 G2)`.
    pub fn gains(&self, data: &ExperimentData) -> (ExprMat, ExprMat) {
        let k = self.times(&data.u0);
        (k.columns(0, self.n), k.columns(self.n, self.nq))
    }

    pub fn pin_gains(&self, prog: &mut Program, data: &ExperimentData, gains: &GainPair) -> Result<(), SynthesisError> {
        prog.set_group("fixed_gains");
        let (k1, k2) = self.gains(data);
        prog.add_eq_mat(&k1, &ExprMat::from_const(&gains.k1))?;
        prog.add_eq_mat(&k2, &ExprMat::from_const(&gains.k2))?;
        Ok(())
    }

    pub fn value(&self, sol: &Solution) -> DMatrix<f64> {
        let mut g = self.g0.clone();
        if let Some(z) = &self.z {
            g += &self.null * sol.value(z);
        }
        for j in 0..g.ncols() {
            let c = self.inv_scale[j];
            g.column_mut(j).scale_mut(c);
        }
        g
    }

    /// The closed-loop representation of an optimal solution. A solution whose `G` no longer
    /// satisfies `V0 G = I` to tolerance after one refinement step is downgraded to a numerical failure.
    pub fn extract(&self, sol: &mut Solution, data: &ExperimentData) -> Result<Option<ClosedLoopRep>, SynthesisError> {
        if !sol.is_optimal() {
            return Ok(None);
        }
        let mut g = self.value(sol);
        // one refinement step against the rounding in N Z
        let mut g0s = self.g0.clone();
        for j in 0..g0s.ncols() {
            let c = self.inv_scale[j];
            g0s.column_mut(j).scale_mut(c);
        }
        let k = self.n + self.nq;
        let resid = DMatrix::identity(k, k) - &data.v0 * &g;
        g += g0s * resid;
        let g1 = g.columns(0, self.n).into_owned();
        let g2 = g.columns(self.n, self.nq).into_owned();
        match closed_loop_rep(data, g1, g2) {
            Ok(rep) => Ok(Some(rep)),
            Err(DataError::ConsistencyViolated { .. }) => {
                sol.status = SolveStatus::NumericalFailure;
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }
}
