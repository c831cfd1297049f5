//! Ground-truth plant, experiment collection, lifted data matrices and the closed-loop representation.
//!
//! Synthesis code only ever sees [`ExperimentData`]; [`PlantModel`] is used to generate data and to
//! simulate certified controllers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::Remainder;
use crate::io::decimal;
use crate::polytope::Polytope;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("disturbance at step {step} has norm {norm} > h_w = {h_w}")]
    DisturbanceBoundViolated { step: usize, norm: f64, h_w: f64 },
    #[error("need T >= n + N + 1 = {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("lifted data matrix stayed rank deficient after {attempts} attempts (rank {rank} < {need})")]
    RankDeficientData { attempts: usize, rank: usize, need: usize },
    #[error("V0 [G1 G2] = I violated, residual {residual:e}")]
    ConsistencyViolated { residual: f64 },
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub remainder: Remainder,
    pub h_w: f64,
}

impl PlantModel {
    pub fn new(
        a1: DMatrix<f64>,
        a2: DMatrix<f64>,
        b: DMatrix<f64>,
        remainder: Remainder,
        h_w: f64,
    ) -> Result<Self, DataError> {
        let n = a1.nrows();
        if a1.ncols() != n || a2.nrows() != n || b.nrows() != n {
            return Err(DataError::DimensionMismatch("A1, A2, B must have n rows and A1 must be square".into()));
        }
        if remainder.n() != n || a2.ncols() != remainder.len() {
            return Err(DataError::DimensionMismatch(format!(
                "dictionary has n = {}, N = {}; A2 is {}x{}",
                remainder.n(),
                remainder.len(),
                a2.nrows(),
                a2.ncols()
            )));
        }
        if !(h_w >= 0.0) {
            return Err(DataError::DimensionMismatch("h_w must be nonnegative".into()));
        }
        Ok(PlantModel { a1, a2, b, remainder, h_w })
    }

    pub fn n(&self) -> usize {
        self.a1.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn nq(&self) -> usize {
        self.a2.ncols()
    }

    /// `A1 + A2 A_s`.
    pub fn a_bar1(&self) -> DMatrix<f64> {
        &self.a1 + &self.a2 * self.remainder.a_s()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a1 * x + &self.a2 * self.remainder.dictionary().eval(x) + &self.b * u + w
    }

    pub fn simulate(
        &self,
        x0: &DVector<f64>,
        inputs: &[DVector<f64>],
        disturbances: &[DVector<f64>],
    ) -> Result<Vec<DVector<f64>>, DataError> {
        if inputs.len() != disturbances.len() {
            return Err(DataError::DimensionMismatch("inputs and disturbances differ in length".into()));
        }
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0.clone());
        for (t, (u, w)) in inputs.iter().zip(disturbances).enumerate() {
            let norm = w.amax();
            if norm > self.h_w * (1.0 + 1e-12) {
                return Err(DataError::DisturbanceBoundViolated { step: t, norm, h_w: self.h_w });
            }
            let next = self.step(&states[t], u, w);
            states.push(next);
        }
        Ok(states)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Sampling {
    /// Uniform in `factor * P`.
    ScaledSet { factor: f64 },
    /// Uniform in the box `|x_i| <= half_width`.
    Box { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentDesign {
    pub t: usize,
    #[serde(default = "one")]
    pub input_amplitude: f64,
    #[serde(default = "default_x0")]
    pub x0: X0Sampling,
    /// Restart from a fresh initial state every `episode_length` samples; `None` is one trajectory.
    #[serde(default)]
    pub episode_length: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_x0() -> X0Sampling {
    X0Sampling::ScaledSet { factor: 0.2 }
}

impl ExperimentDesign {
    pub fn new(t: usize, seed: u64) -> Self {
        ExperimentDesign { t, input_amplitude: 1.0, x0: default_x0(), episode_length: None, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentData {
    #[serde(with = "decimal::matrix")]
    pub u0: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub x0: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub x1: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub v0: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub qx0: DMatrix<f64>,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(with = "decimal::scalar")]
    pub h_w: f64,
    pub seed: u64,
}

impl ExperimentData {
    /// Assemble from raw columns; `Q(X0)` is evaluated with the given remainder.
    pub fn from_columns(
        u0: DMatrix<f64>,
        x0: DMatrix<f64>,
        x1: DMatrix<f64>,
        remainder: &Remainder,
        h_w: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        let t = x0.ncols();
        if u0.ncols() != t || x1.ncols() != t || x1.nrows() != x0.nrows() {
            return Err(DataError::DimensionMismatch("U0, X0, X1 column counts differ".into()));
        }
        let nq = remainder.len();
        let mut qx0 = DMatrix::zeros(nq, t);
        for c in 0..t {
            qx0.set_column(c, &remainder.q(&x0.column(c).into_owned()));
        }
        let n = x0.nrows();
        let mut v0 = DMatrix::zeros(n + nq, t);
        v0.rows_mut(0, n).copy_from(&x0);
        v0.rows_mut(n, nq).copy_from(&qx0);
        Ok(ExperimentData { u0, x0, x1, v0, qx0, t, h_w, seed })
    }

    pub fn n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn nq(&self) -> usize {
        self.qx0.nrows()
    }

    pub fn rank_v0(&self) -> usize {
        numerical_rank(&self.v0)
    }

    /// Moore-Penrose right inverse split into `(G1, G2)`.
    pub fn right_inverse(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let g = self.v0.clone().pseudo_inverse(1e-12).expect("SVD of V0");
        let n = self.n();
        (g.columns(0, n).into_owned(), g.columns(n, self.nq()).into_owned())
    }

    pub fn to_csv(&self) -> (String, String, String) {
        (
            crate::io::columns_csv("x", &self.x0),
            crate::io::columns_csv("x", &self.x1),
            crate::io::columns_csv("u", &self.u0),
        )
    }
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|s| **s > smax * 1e-10).count()
}

/// Orthonormal basis (columns) of `{z : m z = 0}`.
pub fn nullspace(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut sq = DMatrix::zeros(c.max(r), c);
    sq.rows_mut(0, r).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors");
    let smax = svd.singular_values.max();
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= smax * 1e-10)
        .collect();
    DMatrix::from_fn(c, cols.len(), |i, j| v_t[(cols[j], i)])
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, a: f64) -> DVector<f64> {
    if a == 0.0 {
        return DVector::zeros(n);
    }
    DVector::from_fn(n, |_, _| rng.gen_range(-a..=a))
}

fn sample_x0(rng: &mut ChaCha8Rng, how: &X0Sampling, p: &Polytope) -> DVector<f64> {
    match how {
        X0Sampling::Box { half_width } => uniform_vec(rng, p.n(), *half_width),
        X0Sampling::ScaledSet { factor } => {
            let (lo, hi) = p.bounding_box();
            for _ in 0..10_000 {
                let x = DVector::from_fn(p.n(), |j, _| rng.gen_range(lo[j]..=hi[j]));
                if p.contains(&x) {
                    return x * *factor;
                }
            }
            DVector::zeros(p.n())
        }
    }
}

/// Run the experiment of `design` on `plant`; `p` sets the initial-state distribution when it is
/// given relative to the safe set. Retries with the next seed (up to 10 attempts) when `V0` is rank
/// deficient.
pub fn collect_experiment(plant: &PlantModel, design: &ExperimentDesign, p: &Polytope) -> Result<ExperimentData, DataError> {
    let (n, m, nq) = (plant.n(), plant.m(), plant.nq());
    let need = n + nq + 1;
    if design.t < need {
        return Err(DataError::TooFewSamples { need, got: design.t });
    }
    let mut last_rank = 0;
    for attempt in 0..10u64 {
        let seed = design.seed.wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = sample_x0(&mut rng, &design.x0, p);
        let mut x0 = DMatrix::zeros(n, design.t);
        let mut x1 = DMatrix::zeros(n, design.t);
        let mut u0 = DMatrix::zeros(m, design.t);
        for t in 0..design.t {
            if let Some(len) = design.episode_length {
                if t > 0 && len > 0 && t % len == 0 {
                    x = sample_x0(&mut rng, &design.x0, p);
                }
            }
            let u = uniform_vec(&mut rng, m, design.input_amplitude);
            let w = uniform_vec(&mut rng, n, plant.h_w);
            let next = plant.step(&x, &u, &w);
            x0.set_column(t, &x);
            x1.set_column(t, &next);
            u0.set_column(t, &u);
            x = next;
        }
        let data = ExperimentData::from_columns(u0, x0, x1, &plant.remainder, plant.h_w, seed)?;
        last_rank = data.rank_v0();
        if last_rank == n + nq {
            return Ok(data);
        }
    }
    Err(DataError::RankDeficientData { attempts: 10, rank: last_rank, need: n + nq })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRep {
    #[serde(with = "decimal::matrix")]
    pub g_k1: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub g_k2: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub k1: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub k2: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub m1: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub m2: DMatrix<f64>,
}

pub const CONSISTENCY_TOL: f64 = 1e-7;

pub fn consistency_residual(d: &ExperimentData, g1: &DMatrix<f64>, g2: &DMatrix<f64>) -> f64 {
    let (n, nq) = (d.n(), d.nq());
    let mut g = DMatrix::zeros(d.t, n + nq);
    g.columns_mut(0, n).copy_from(g1);
    g.columns_mut(n, nq).copy_from(g2);
    (&d.v0 * g - DMatrix::identity(n + nq, n + nq)).amax()
}

pub fn closed_loop_rep(d: &ExperimentData, g1: DMatrix<f64>, g2: DMatrix<f64>) -> Result<ClosedLoopRep, DataError> {
    if g1.shape() != (d.t, d.n()) || g2.shape() != (d.t, d.nq()) {
        return Err(DataError::DimensionMismatch("G blocks must be T x n and T x N".into()));
    }
    let residual = consistency_residual(d, &g1, &g2);
    if residual > CONSISTENCY_TOL {
        return Err(DataError::ConsistencyViolated { residual });
    }
    Ok(ClosedLoopRep {
        k1: &d.u0 * &g1,
        k2: &d.u0 * &g2,
        m1: &d.x1 * &g1,
        m2: &d.x1 * &g2,
        g_k1: g1,
        g_k2: g2,
    })
}
