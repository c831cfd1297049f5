//! Controller evaluation, face-supported interpolation and closed-loop simulation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Remainder;
use crate::io::decimal;
use crate::plant_data::PlantModel;
use crate::polytope::{combinations, Face, Polytope, PolytopeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("no convex combination of the face vertices reproduces the point")]
    NoDecomposition,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Weights drifting outside the set by at most this many tolerances are pulled back radially.
pub const DRIFT_FACTOR: f64 = 10.0;
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceWeights {
    pub face: Arc<Face>,
    /// `(vertex index, weight)`, supported on the face vertices.
    pub weights: Vec<(usize, f64)>,
    /// The point actually decomposed (after any drift projection).
    pub point: DVector<f64>,
}

#[cfg(any(test, feature = "solver"))]
fn reconstruction_error(p: &Polytope, w: &[(usize, f64)], x: &DVector<f64>) -> f64 {
    let verts = &p.vertices().vertices;
    let mut y = DVector::zeros(x.len());
    let mut total = 0.0;
    for (i, t) in w {
        y += &verts[*i] * *t;
        total += t;
    }
    (y - x).norm().max((total - 1.0).abs())
}

/// Pull a point that left `p` by numerical drift back onto it; `None` if it is genuinely outside.
pub fn project_drift(p: &Polytope, x: &DVector<f64>) -> Option<DVector<f64>> {
    if p.contains(x) {
        return Some(x.clone());
    }
    let excess = (0..p.s()).map(|i| p.f().row(i).dot(&x.transpose()) - p.g()[i]).fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0 + p.g().amax() + p.f().amax() * x.amax();
    if excess > DRIFT_FACTOR * p.tol() * scale {
        return None;
    }
    match p.minkowski_gauge(x) {
        Ok(v) if v > 1.0 => Some(x / v),
        _ => None,
    }
}

/// Barycentric weights from the first affinely independent vertex subset (lexicographic) whose
/// simplex contains `x`.
pub fn simplex_weights(p: &Polytope, candidates: &[usize], dim: usize, x: &DVector<f64>) -> Option<Vec<(usize, f64)>> {
    let verts = &p.vertices().vertices;
    let n = x.len();
    if candidates.len() == 1 {
        return Some(vec![(candidates[0], 1.0)]);
    }
    for combo in combinations(candidates.len(), dim + 1) {
        let idx: Vec<usize> = combo.iter().map(|&c| candidates[c]).collect();
        let a = DMatrix::from_fn(n + 1, idx.len(), |r, c| if r < n { verts[idx[c]][r] } else { 1.0 });
        let mut b = DVector::from_element(n + 1, 1.0);
        b.rows_mut(0, n).copy_from(x);
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= smax * 1e-10 {
            continue;
        }
        let Ok(theta) = svd.solve(&b, 1e-14) else { continue };
        if (&a * &theta - &b).norm() > 1e-10 * (1.0 + b.norm()) {
            continue;
        }
        if theta.iter().all(|t| *t >= -1e-12) {
            return Some(idx.into_iter().zip(theta.iter().map(|t| t.max(0.0))).collect());
        }
    }
    None
}

/// Minimum max-weight convex combination of `candidates` reproducing `x`, then a least-squares
/// polish on the support.
#[cfg(feature = "solver")]
fn lp_weights(p: &Polytope, candidates: &[usize], x: &DVector<f64>) -> Option<Vec<(usize, f64)>> {
    use crate::conic::{dot, LinExpr, Program, SolverConfig};
    let verts = &p.vertices().vertices;
    let k = candidates.len();
    let mut prog = Program::new();
    let th = prog.declare_nonneg("theta", k, 1).ok()?;
    let s = prog.declare("s", 1, 1).ok()?;
    prog.add_eq(th.sum() - 1.0).ok()?;
    for j in 0..x.len() {
        let row: Vec<f64> = candidates.iter().map(|&v| verts[v][j]).collect();
        prog.add_eq(dot(&row, &th.vec()) - x[j]).ok()?;
    }
    for c in 0..k {
        prog.add_le(th.get(c), s.get(0)).ok()?;
    }
    prog.set_objective(LinExpr::var(s.start)).ok()?;
    let sol = prog.solve(&SolverConfig::default()).ok()?;
    if !sol.is_optimal() {
        return None;
    }
    let mut theta = DVector::from_vec(sol.vector(&th));
    let n = x.len();
    let mut b = DVector::from_element(n + 1, 1.0);
    b.rows_mut(0, n).copy_from(x);
    let top = theta.max();
    let support: Vec<usize> = (0..k).filter(|&c| theta[c] > 1e-9 * top.max(1e-300)).collect();
    let a = DMatrix::from_fn(n + 1, support.len(), |r, c| if r < n { verts[candidates[support[c]]][r] } else { 1.0 });
    let ts = DVector::from_fn(support.len(), |c, _| theta[support[c]]);
    let corrected = match a.clone().pseudo_inverse(1e-12) {
        Ok(pinv) => &ts + pinv * (&b - &a * &ts),
        Err(_) => ts,
    };
    theta.fill(0.0);
    for (c, &i) in support.iter().enumerate() {
        theta[i] = corrected[c].max(0.0);
    }
    Some(candidates.iter().copied().zip(theta.iter().copied()).collect())
}

/// Weights over `candidates` (which must contain the minimal face of `x`).
pub fn weights_over(p: &Polytope, candidates: &[usize], dim: usize, x: &DVector<f64>) -> Result<Vec<(usize, f64)>, RuntimeError> {
    #[cfg(feature = "solver")]
    {
        if let Some(w) = lp_weights(p, candidates, x) {
            if reconstruction_error(p, &w, x) <= 1e-11 * (1.0 + x.amax()) {
                return Ok(w);
            }
        }
    }
    simplex_weights(p, candidates, dim, x).ok_or(RuntimeError::NoDecomposition)
}

/// `theta(x)`: nonnegative weights summing to one, supported on the vertices of the minimal face
/// of `x`, with `sum theta_l x_l = x`. Ties are broken by minimizing the largest weight.
pub fn face_weights(p: &Polytope, x: &DVector<f64>) -> Result<FaceWeights, RuntimeError> {
    if x.len() != p.n() {
        return Err(RuntimeError::DimensionMismatch(format!("point has length {}", x.len())));
    }
    let y = match project_drift(p, x) {
        Some(y) => y,
        None => {
            p.minimal_face(x)?;
            return Err(RuntimeError::NoDecomposition);
        }
    };
    let face = p.minimal_face(&y)?;
    let weights = weights_over(p, &face.vertex_indices, face.dim(), &y)?;
    Ok(FaceWeights { face, weights, point: y })
}

/// `sum_l theta_l(x) f(l)`.
pub fn interpolate<F>(p: &Polytope, x: &DVector<f64>, f: F) -> Result<DVector<f64>, RuntimeError>
where
    F: Fn(usize, &DVector<f64>) -> DVector<f64>,
{
    let fw = face_weights(p, x)?;
    let mut out: Option<DVector<f64>> = None;
    for (l, t) in &fw.weights {
        if *t == 0.0 {
            continue;
        }
        let v = f(*l, &fw.point) * *t;
        out = Some(match out {
            Some(acc) => acc + v,
            None => v,
        });
    }
    out.ok_or(RuntimeError::NoDecomposition)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainPair {
    #[serde(with = "decimal::matrix")]
    pub k1: DMatrix<f64>,
    #[serde(with = "decimal::matrix")]
    pub k2: DMatrix<f64>,
}

impl GainPair {
    pub fn apply(&self, rem: &Remainder, x: &DVector<f64>) -> DVector<f64> {
        let mut u = &self.k1 * x;
        if self.k2.ncols() > 0 {
            u += &self.k2 * rem.q(x);
        }
        u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    Global(GainPair),
    /// One gain pair per vertex of `polytope`.
    VertexFamily { polytope: Polytope, gains: Vec<GainPair> },
}

#[derive(Debug, Clone)]
pub struct Controller {
    pub kind: ControllerKind,
    pub remainder: Remainder,
}

impl Controller {
    pub fn global(k1: DMatrix<f64>, k2: DMatrix<f64>, remainder: Remainder) -> Self {
        Controller { kind: ControllerKind::Global(GainPair { k1, k2 }), remainder }
    }

    pub fn vertex_family(polytope: Polytope, gains: Vec<GainPair>, remainder: Remainder) -> Result<Self, RuntimeError> {
        if gains.len() != polytope.vertices().len() {
            return Err(RuntimeError::DimensionMismatch(format!(
                "{} gain pairs for {} vertices",
                gains.len(),
                polytope.vertices().len()
            )));
        }
        Ok(Controller { kind: ControllerKind::VertexFamily { polytope, gains }, remainder })
    }

    pub fn m(&self) -> usize {
        match &self.kind {
            ControllerKind::Global(g) => g.k1.nrows(),
            ControllerKind::VertexFamily { gains, .. } => gains[0].k1.nrows(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>, RuntimeError> {
        match &self.kind {
            ControllerKind::Global(g) => Ok(g.apply(&self.remainder, x)),
            ControllerKind::VertexFamily { polytope, gains } => {
                interpolate(polytope, x, |l, y| gains[l].apply(&self.remainder, y))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    Zero,
    /// Componentwise uniform on `[-h_w, h_w]`.
    Uniform { h_w: f64 },
}

impl Disturbance {
    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        match self {
            Disturbance::Zero => DVector::zeros(n),
            Disturbance::Uniform { h_w } if *h_w > 0.0 => DVector::from_fn(n, |_, _| rng.gen_range(-h_w..=*h_w)),
            Disturbance::Uniform { .. } => DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub gauges: Vec<f64>,
    pub violated_at: Option<usize>,
}

impl Trajectory {
    /// Columns `t, x1..xn, u1..um, V`; the input of the last state is left empty.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map(|x| x.len()).unwrap_or(0);
        let m = self.inputs.first().map(|u| u.len()).unwrap_or(0);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|j| format!("x{j}")));
        header.extend((1..=m).map(|j| format!("u{j}")));
        header.push("V".into());
        let mut out = header.join(",");
        out.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            let mut cells = vec![t.to_string()];
            cells.extend(x.iter().map(|v| crate::io::decimal_string(*v)));
            match self.inputs.get(t) {
                Some(u) => cells.extend(u.iter().map(|v| crate::io::decimal_string(*v))),
                None => cells.extend(std::iter::repeat(String::new()).take(m)),
            }
            cells.push(crate::io::decimal_string(self.gauges[t]));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Largest `V(x(t+1)) - lambda V(x(t))` along the trajectory.
    pub fn max_gauge_increase(&self, lambda: f64) -> f64 {
        self.gauges.windows(2).map(|w| w[1] - lambda * w[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn gauge(p: &Polytope, x: &DVector<f64>) -> f64 {
    p.minkowski_gauge(x).unwrap_or(f64::NAN)
}

/// Simulate `steps` steps of the true plant under `c`. The first state outside `p` is recorded;
/// a face-interpolated controller cannot be evaluated there, so that run stops.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    c: &Controller,
    p: &Polytope,
    x0: &DVector<f64>,
    steps: usize,
    disturbance: Disturbance,
    seed: u64,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = plant.n();
    let mut x = x0.clone();
    let mut traj = Trajectory { states: vec![x.clone()], inputs: Vec::new(), gauges: vec![gauge(p, &x)], violated_at: None };
    if !p.contains(&x) {
        traj.violated_at = Some(0);
    }
    for t in 0..steps {
        let u = match c.eval(&x) {
            Ok(u) => u,
            Err(_) => break,
        };
        let w = disturbance.sample(&mut rng, n);
        x = plant.step(&x, &u, &w);
        traj.inputs.push(u);
        traj.gauges.push(gauge(p, &x));
        traj.states.push(x.clone());
        if traj.violated_at.is_none() && !p.contains(&x) && project_drift(p, &x).is_none() {
            traj.violated_at = Some(t + 1);
        }
    }
    traj
}

/// One trajectory from every vertex of `p`; run `r` uses seed `seed + r`.
pub fn simulate_vertex_bundle(
    plant: &PlantModel,
    c: &Controller,
    p: &Polytope,
    steps: usize,
    disturbance: Disturbance,
    seed: u64,
) -> Vec<Trajectory> {
    let verts = p.vertices().vertices.clone();
    let run = |(k, v): (usize, &DVector<f64>)| simulate_closed_loop(plant, c, p, v, steps, disturbance, seed.wrapping_add(k as u64));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        verts.par_iter().enumerate().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        verts.iter().enumerate().map(run).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    fn paper_rem() -> Remainder {
        presets::paper_plant(-0.01, -0.005, 0.0).remainder
    }

    fn weight_of(w: &FaceWeights, l: usize) -> f64 {
        w.weights.iter().filter(|(i, _)| *i == l).map(|(_, t)| *t).sum()
    }

    #[test]
    fn vertex_gets_indicator() {
        let p = Polytope::hypercube(3, 0.5).unwrap();
        for (l, v) in p.vertices().vertices.iter().enumerate() {
            let w = face_weights(&p, v).unwrap();
            assert!((weight_of(&w, l) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn edge_midpoint_splits_evenly() {
        let p = Polytope::hypercube(3, 0.5).unwrap();
        let x = DVector::from_vec(vec![0.5, 0.5, 0.0]);
        let w = face_weights(&p, &x).unwrap();
        assert_eq!(w.face.vertex_indices.len(), 2);
        for &l in &w.face.vertex_indices {
            assert!((weight_of(&w, l) - 0.5).abs() < 1e-9);
        }
    }

    #[cfg(feature = "solver")]
    #[test]
    fn centre_is_uniform() {
        let p = Polytope::hypercube(3, 0.5).unwrap();
        let w = face_weights(&p, &DVector::zeros(3)).unwrap();
        assert_eq!(w.weights.len(), 8);
        // Independent check: the uniform weights reproduce the centre and attain the lower bound 1/8.
        assert!(reconstruction_error(&p, &w.weights, &DVector::zeros(3)) < 1e-8);
        for (_, t) in &w.weights {
            assert!((t - 0.125).abs() < 1e-6, "{t}");
        }
    }

    #[test]
    fn simplex_fallback_reconstructs() {
        let p = Polytope::hypercube(2, 1.0).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let all: Vec<usize> = (0..4).collect();
        let w = simplex_weights(&p, &all, 2, &x).unwrap();
        assert!(reconstruction_error(&p, &w, &x) < 1e-12);
        assert!(w.iter().all(|(_, t)| *t >= 0.0));
    }

    #[test]
    fn outside_points_are_rejected_and_drift_is_projected() {
        let p = Polytope::hypercube(2, 1.0).unwrap();
        assert!(face_weights(&p, &DVector::from_vec(vec![1.5, 0.0])).is_err());
        let drifted = DVector::from_vec(vec![1.0 + 5e-9, 0.2]);
        let w = face_weights(&p, &drifted).unwrap();
        assert!(p.contains(&w.point));
    }

    #[test]
    fn paper_gains_example_input() {
        let k1 = DMatrix::from_row_slice(1, 3, &[0.416, -1.35, 0.035]);
        let k2 = DMatrix::from_row_slice(1, 4, &[0.0, 0.2, 0.0, 0.0]);
        let c = Controller::global(k1, k2, paper_rem());
        let u = c.eval(&DVector::from_vec(vec![0.1, 0.0, 0.0])).unwrap();
        assert!((u[0] - 0.0416).abs() < 1e-12);
        assert_eq!(c.eval(&DVector::zeros(3)).unwrap()[0], 0.0);
    }

    #[test]
    fn vertex_family_at_vertex_uses_that_gain() {
        let p = Polytope::hypercube(3, 0.5).unwrap();
        let gains: Vec<GainPair> = (0..8)
            .map(|l| GainPair { k1: DMatrix::from_element(1, 3, l as f64), k2: DMatrix::from_element(1, 4, 0.1 * l as f64) })
            .collect();
        let rem = paper_rem();
        let c = Controller::vertex_family(p.clone(), gains.clone(), rem.clone()).unwrap();
        for (l, v) in p.vertices().vertices.iter().enumerate() {
            let u = c.eval(v).unwrap();
            assert!((u - gains[l].apply(&rem, v)).amax() < 1e-9);
        }
        assert!(c.eval(&DVector::from_vec(vec![0.9, 0.0, 0.0])).is_err());
    }

    #[test]
    fn example_one_zero_input_is_invariant() {
        let plant = presets::example1_plant();
        let p = presets::example1_interval();
        let c = Controller::global(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), plant.remainder.clone());
        for x0 in [-1.0, 0.0] {
            let tr = simulate_closed_loop(&plant, &c, &p, &DVector::from_element(1, x0), 500, Disturbance::Zero, 0);
            assert!(tr.violated_at.is_none());
            assert!(tr.states.iter().all(|x| (x[0] - x0).abs() < 1e-12));
        }
    }

    #[test]
    fn origin_stays_at_origin() {
        let plant = presets::paper_plant(-0.01, -0.005, 0.0);
        let c = Controller::global(DMatrix::from_element(1, 3, 0.3), DMatrix::from_element(1, 4, 0.1), plant.remainder.clone());
        let p = presets::paper_box(0.5);
        let tr = simulate_closed_loop(&plant, &c, &p, &DVector::zeros(3), 50, Disturbance::Zero, 1);
        assert!(tr.states.iter().all(|x| x.amax() == 0.0));
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,x1,x2,x3,u1,V\n"));
        assert_eq!(csv.lines().count(), 52);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn weights_reconstruct_random_points(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            let p = Polytope::hypercube(3, 0.7).unwrap();
            let x = DVector::from_vec(vec![0.7 * a, 0.7 * b, 0.7 * c]);
            let w = face_weights(&p, &x).unwrap();
            prop_assert!(w.weights.iter().all(|(_, t)| *t >= 0.0));
            let total: f64 = w.weights.iter().map(|(_, t)| t).sum();
            prop_assert!((total - 1.0).abs() <= 1e-10);
            prop_assert!(reconstruction_error(&p, &w.weights, &x) <= 1e-8);
            for (l, _) in &w.weights {
                prop_assert!(w.face.vertex_indices.contains(l));
            }
        }

        #[test]
        fn shared_face_points_agree_from_both_facets(s in 0.0f64..1.0, face in 0usize..3) {
            // A point on an edge of the box is decomposed identically whether the candidates are the
            // vertices of one incident facet or the other.
            let p = Polytope::hypercube(3, 1.0).unwrap();
            let mut x = DVector::from_element(3, 1.0);
            x[face] = 2.0 * s - 1.0;
            let fw = face_weights(&p, &x).unwrap();
            let others: Vec<usize> = (0..3).filter(|j| *j != face).collect();
            let facet_a = p.active_set(&x).into_iter().find(|i| p.f()[(*i, others[0])] > 0.5).unwrap();
            let facet_b = p.active_set(&x).into_iter().find(|i| p.f()[(*i, others[1])] > 0.5).unwrap();
            let wa = weights_over(&p, &p.facet(facet_a).vertex_indices, 2, &x).unwrap();
            let wb = weights_over(&p, &p.facet(facet_b).vertex_indices, 2, &x).unwrap();
            let gains: Vec<f64> = (0..8).map(|l| (l as f64).sin()).collect();
            let u = |w: &[(usize, f64)]| w.iter().map(|(l, t)| gains[*l] * t).sum::<f64>();
            prop_assert!((u(&wa) - u(&wb)).abs() <= 1e-6);
            prop_assert!((u(&wa) - u(&fw.weights)).abs() <= 1e-6);
        }
    }
}
