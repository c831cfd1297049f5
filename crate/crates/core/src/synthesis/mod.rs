//! Certificate programs and the experiment drivers built on them.
//!
//! Every program searches over right inverses `G = [G1 G2]` of the lifted data matrix, so that the
//! closed loop is `x+ = X1 G1 x + X1 G2 Q(x)` with gains `K1 = U0 G1`, `K2 = U0 G2`.

mod curvature;
mod drivers;
mod hybrid;
mod param;
mod robust;
mod thm1;
mod thm2;
mod vertexwise;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Remainder;
use crate::conic::{ConicError, Solution, SolveStatus, SolverConfig, SolverStats, VarHandle};
use crate::io::{decimal, Mat};
use crate::plant_data::{ClosedLoopRep, DataError, ExperimentData};
use crate::polytope::{Polytope, PolytopeError};
use crate::runtime::{interpolate, Controller, GainPair, RuntimeError};

pub use drivers::{
    certify, maximize_radius, sweep_coefficient, synthesize, Certified, RadiusProbe, RadiusResult, RadiusSearch,
    SweepProbe, SweepResult, SweepSearch, VerifyPolicy, VerifySettings,
};
pub use hybrid::synth_hybrid;
pub use param::DataParam;
pub use robust::synth_robust;
pub use thm1::{lipschitz_aggregate, synth_lipschitz};
pub use thm2::synth_dc_global;
pub use vertexwise::{add_input_constraints, synth_vertexwise};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("infeasible at the lower bracket end r = {0}")]
    InfeasibleAtLowerBracket(f64),
    #[error("infeasible at coefficient magnitude zero")]
    InfeasibleAtZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theorem {
    /// Lipschitz bounding of the remainder.
    #[serde(rename = "1")]
    Lipschitz,
    /// Global difference-of-convex certificate.
    #[serde(rename = "2")]
    DcGlobal,
    /// Exact convex part plus Lipschitz residual.
    #[serde(rename = "p1")]
    Hybrid,
    /// Face-restricted certificates with vertex-interpolated gains.
    #[serde(rename = "3")]
    Vertexwise,
    /// Disturbance-robust difference-of-convex certificate.
    #[serde(rename = "4")]
    Robust,
}

impl Theorem {
    pub fn label(&self) -> &'static str {
        match self {
            Theorem::Lipschitz => "1",
            Theorem::DcGlobal => "2",
            Theorem::Hybrid => "p1",
            Theorem::Vertexwise => "3",
            Theorem::Robust => "4",
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Theorem {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "1" => Ok(Theorem::Lipschitz),
            "2" => Ok(Theorem::DcGlobal),
            "p1" | "P1" => Ok(Theorem::Hybrid),
            "3" => Ok(Theorem::Vertexwise),
            "4" => Ok(Theorem::Robust),
            other => Err(format!("unknown theorem `{other}` (expected 1, 2, p1, 3 or 4)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Curvature slack on every facet.
    #[default]
    Unstructured,
    /// No slack on facets active at the vertex.
    Structured,
    /// Slack only on facets active at the vertex; needs posterior verification.
    ActiveOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Unstructured => "unstructured",
            Mode::Structured => "structured",
            Mode::ActiveOnly => "active_only",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unstructured" => Ok(Mode::Unstructured),
            "structured" => Ok(Mode::Structured),
            "active_only" | "active-only" => Ok(Mode::ActiveOnly),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// How the data-noise term enters the robust certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceBound {
    /// `h_w |F_i|_1 (|G1 x|_1 + sum_k qbar_k |G2[:,k]|_1 + 1)`, the exact worst case of the
    /// data-noise and process-noise terms under componentwise bounds.
    #[default]
    Exact,
    /// `T h_w |F_i|_1 (xi1 + xi2 + 1)` with `xi1 >= |G1 x_l|_2`, `xi2 >= |G2 q_l|_2`.
    PaperVertex,
}

/// Which Hessian directions the curvature slack must cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureScope {
    /// Full Hessian at every vertex of the set.
    Full,
    /// Hessian projected on the facet's tangent space, at the facet's vertices.
    #[default]
    FacetTangent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPolytope {
    #[serde(with = "decimal::matrix")]
    pub f_u: DMatrix<f64>,
    #[serde(with = "decimal::vector")]
    pub g_u: DVector<f64>,
}

impl InputPolytope {
    /// `|u_j| <= bound` for every input.
    pub fn symmetric_box(m: usize, bound: f64) -> Self {
        let mut f_u = DMatrix::zeros(2 * m, m);
        for j in 0..m {
            f_u[(j, j)] = 1.0;
            f_u[(m + j, j)] = -1.0;
        }
        InputPolytope { f_u, g_u: DVector::from_element(2 * m, bound) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub solver: SolverConfig,
    /// Pin `U0 G1 = K1`, `U0 G2 = K2`.
    pub fixed_gains: Option<GainPair>,
    pub disturbance_bound: DisturbanceBound,
    /// Curvature scope for the robust certificate.
    pub robust_curvature: CurvatureScope,
    /// Grid density for non-affine Hessians and sampled Lipschitz bounds.
    pub grid_per_axis: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            solver: SolverConfig::default(),
            fixed_gains: None,
            disturbance_bound: DisturbanceBound::Exact,
            robust_curvature: CurvatureScope::FacetTangent,
            grid_per_axis: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertificateSpec {
    pub polytope: Polytope,
    pub data: ExperimentData,
    pub remainder: Remainder,
    pub lambda: f64,
    pub h_w: f64,
    pub input: Option<InputPolytope>,
    pub options: SynthOptions,
}

impl CertificateSpec {
    pub fn new(polytope: Polytope, data: ExperimentData, remainder: Remainder) -> Self {
        let h_w = data.h_w;
        CertificateSpec { polytope, data, remainder, lambda: 1.0, h_w, input: None, options: SynthOptions::default() }
    }

    pub fn with_polytope(&self, polytope: Polytope) -> Self {
        CertificateSpec { polytope, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: String| Err(SynthesisError::InvalidSpec(m));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad(format!("lambda = {} must lie in (0, 1]", self.lambda));
        }
        if !(self.h_w >= 0.0) {
            return bad(format!("h_w = {} must be nonnegative", self.h_w));
        }
        let (n, nq) = (self.data.n(), self.data.nq());
        if self.polytope.n() != n || self.remainder.n() != n {
            return bad(format!("state dimension mismatch: data {n}, polytope {}, dictionary {}", self.polytope.n(), self.remainder.n()));
        }
        if self.remainder.len() != nq {
            return bad(format!("data has {nq} remainder rows, dictionary has {}", self.remainder.len()));
        }
        if let Some(u) = &self.input {
            if u.f_u.ncols() != self.data.m() || u.f_u.nrows() != u.g_u.len() {
                return bad("input polytope shape does not match the input dimension".into());
            }
        }
        if let Some(k) = &self.options.fixed_gains {
            if k.k1.shape() != (self.data.m(), n) || k.k2.shape() != (self.data.m(), nq) {
                return bad("fixed gains have the wrong shape".into());
            }
        }
        Ok(())
    }

    pub(crate) fn require_disturbance_free(&self, what: &str) -> Result<(), SynthesisError> {
        if self.h_w > 0.0 {
            return Err(SynthesisError::Precondition(format!("{what} assumes h_w = 0, got {}", self.h_w)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gains {
    Global { rep: ClosedLoopRep },
    /// One representation per vertex; `class[l]` is the index of the program that produced it.
    VertexFamily { reps: Vec<ClosedLoopRep>, class: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub theorem: Theorem,
    pub mode: Option<Mode>,
    pub status: SolveStatus,
    #[serde(with = "decimal::scalar")]
    pub lambda: f64,
    #[serde(with = "decimal::scalar")]
    pub objective: f64,
    pub polytope: Polytope,
    pub gains: Option<Gains>,
    pub slacks: BTreeMap<String, Mat>,
    pub duals: Vec<Mat>,
    pub infeasible_groups: Vec<String>,
    /// Set when the certificate is only trusted after sampling-based verification.
    pub requires_verification: bool,
    pub programs_solved: usize,
    pub stats: Vec<SolverStats>,
}

impl SynthesisResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal && self.gains.is_some()
    }

    pub fn slack(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.slacks.get(name).map(|m| &m.0)
    }

    pub fn global_rep(&self) -> Option<&ClosedLoopRep> {
        match &self.gains {
            Some(Gains::Global { rep }) => Some(rep),
            _ => None,
        }
    }

    pub fn controller(&self, rem: &Remainder) -> Option<Controller> {
        match self.gains.as_ref()? {
            Gains::Global { rep } => Some(Controller::global(rep.k1.clone(), rep.k2.clone(), rem.clone())),
            Gains::VertexFamily { reps, .. } => {
                let gains = reps.iter().map(|r| GainPair { k1: r.k1.clone(), k2: r.k2.clone() }).collect();
                Controller::vertex_family(self.polytope.clone(), gains, rem.clone()).ok()
            }
        }
    }

    /// Successor predicted by the data-based closed loop.
    pub fn data_successor(&self, rem: &Remainder, x: &DVector<f64>) -> Result<DVector<f64>, RuntimeError> {
        let step = |rep: &ClosedLoopRep, y: &DVector<f64>| {
            let mut out = &rep.m1 * y;
            if rep.m2.ncols() > 0 {
                out += &rep.m2 * rem.q(y);
            }
            out
        };
        match &self.gains {
            Some(Gains::Global { rep }) => Ok(step(rep, x)),
            Some(Gains::VertexFamily { reps, .. }) => interpolate(&self.polytope, x, |l, y| step(&reps[l], y)),
            None => Err(RuntimeError::NoDecomposition),
        }
    }

    pub(crate) fn failed(theorem: Theorem, mode: Option<Mode>, spec: &CertificateSpec, sol: &Solution) -> Self {
        SynthesisResult {
            theorem,
            mode,
            status: if sol.status == SolveStatus::Optimal { SolveStatus::NumericalFailure } else { sol.status },
            lambda: spec.lambda,
            objective: f64::NAN,
            polytope: spec.polytope.clone(),
            gains: None,
            slacks: BTreeMap::new(),
            duals: Vec::new(),
            infeasible_groups: sol.infeasible_groups.clone(),
            requires_verification: false,
            programs_solved: 1,
            stats: vec![sol.stats.clone()],
        }
    }
}

pub(crate) fn collect_slacks(sol: &Solution, handles: &[&VarHandle]) -> BTreeMap<String, Mat> {
    handles.iter().map(|h| (h.name.clone(), Mat(sol.value(h)))).collect()
}
