//! Independent checks of synthesized certificates: facet maps, dense-grid oracles, Monte-Carlo
//! contractivity sampling and the difference-of-convex majorizer.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Remainder;
use crate::io::decimal;
use crate::plant_data::ClosedLoopRep;
use crate::polytope::Polytope;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("dense grid oracle limited to n <= {limit}, got {n}")]
    DimensionTooLarge { n: usize, limit: usize },
    #[error("at least one sample is required")]
    NoSamples,
    #[error("boundary fraction {0} outside [0, 1]")]
    BadFraction(f64),
}

pub const GRID_DIM_LIMIT: usize = 3;
pub const MC_TOL: f64 = 1e-9;

/// `H_i(x) = c_i' x + w_i' Q(x)`, the i-th facet inequality evaluated on the successor state.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetMap {
    pub index: usize,
    pub c: DVector<f64>,
    pub w: DVector<f64>,
    pub g: f64,
}

impl FacetMap {
    pub fn eval(&self, rem: &Remainder, x: &DVector<f64>) -> f64 {
        self.c.dot(x) + if self.w.is_empty() { 0.0 } else { self.w.dot(&rem.q(x)) }
    }

    pub fn hessian(&self, rem: &Remainder, x: &DVector<f64>) -> DMatrix<f64> {
        rem.curvature_operator(&self.w, x)
    }

    /// `L_i(x)`, the curvature operator with weights `-w_i`.
    pub fn curvature_deficit(&self, rem: &Remainder, x: &DVector<f64>) -> DMatrix<f64> {
        -self.hessian(rem, x)
    }
}

pub fn facet_maps(rep: &ClosedLoopRep, p: &Polytope) -> Vec<FacetMap> {
    let c = p.f() * &rep.m1;
    let w = p.f() * &rep.m2;
    (0..p.s())
        .map(|i| FacetMap {
            index: i,
            c: c.row(i).transpose(),
            w: w.row(i).transpose(),
            g: p.g()[i],
        })
        .collect()
}

/// Default points per axis: 401 for n = 1, 201 for n = 2, 61 for n = 3.
pub fn default_grid_resolution(n: usize) -> usize {
    match n {
        1 => 401,
        2 => 201,
        _ => 61,
    }
}

/// Dense-grid maximum of `f` over `p` followed by a coordinate search around the best point.
/// Returns the maximum and its argument.
pub fn grid_max_oracle<F>(f: F, p: &Polytope, points_per_axis: usize) -> Result<(f64, DVector<f64>), VerifyError>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let n = p.n();
    if n > GRID_DIM_LIMIT {
        return Err(VerifyError::DimensionTooLarge { n, limit: GRID_DIM_LIMIT });
    }
    let pts = crate::basis::grid_points(p, points_per_axis);
    let vals: Vec<f64> = map_points(&pts, &f);
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, v) in vals.iter().enumerate() {
        if *v > best {
            best = *v;
            best_i = i;
        }
    }
    let mut arg = pts[best_i].clone();
    let (lo, hi) = p.bounding_box();
    let per_axis = points_per_axis.max(2);
    let mut step: Vec<f64> = (0..n).map(|j| 2.0 * (hi[j] - lo[j]) / (per_axis - 1) as f64).collect();
    for _ in 0..60 {
        let mut improved = false;
        for j in 0..n {
            for dir in [-1.0, 1.0] {
                let mut y = arg.clone();
                y[j] += dir * step[j];
                if (p.f() * &y - p.g()).max() <= 0.0 {
                    let v = f(&y);
                    if v > best {
                        best = v;
                        arg = y;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    Ok((best, arg))
}

/// Grid spacing of [`grid_max_oracle`] per axis.
pub fn grid_cell(p: &Polytope, points_per_axis: usize) -> f64 {
    let (lo, hi) = p.bounding_box();
    (0..p.n()).map(|j| (hi[j] - lo[j]) / (points_per_axis.max(2) - 1) as f64).fold(0.0, f64::max)
}

fn map_points<F>(pts: &[DVector<f64>], f: &F) -> Vec<f64>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pts.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pts.iter().map(f).collect()
    }
}

/// Bounds on `max H_1` for the two-state example `H_1 = a11 x1 + a12 x2 + c_u x2^3` over
/// `[0, r1] x [0, r2]`: `(lipschitz, exact)`.
pub fn lipschitz_bound_vs_exact(a11: f64, a12: f64, c_u: f64, r1: f64, r2: f64) -> (f64, f64) {
    let lip = a11 * r1 + (a12 + 3.0 * c_u.abs() * r2 * r2) * r2;
    let exact = a11 * r1 + (a12 + c_u * r2 * r2) * r2;
    (lip, exact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(with = "decimal::vector")]
    pub x: DVector<f64>,
    pub facet: usize,
    #[serde(with = "decimal::scalar")]
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    #[serde(with = "decimal::scalar")]
    pub lambda: f64,
    pub samples: usize,
    #[serde(with = "decimal::scalar")]
    pub boundary_fraction: f64,
    pub seed: u64,
    /// `min over samples of lambda g_i - F_i x+`, per facet.
    #[serde(with = "decimal::vector")]
    pub worst_margin: DVector<f64>,
    pub violations: Vec<Violation>,
    /// Largest scaling `rho` with `F x+ <= rho g` over the samples.
    #[serde(with = "decimal::scalar")]
    pub certified_scaling: f64,
    pub passed: bool,
    pub confidence_note: String,
}

impl VerificationReport {
    pub fn violations_csv(&self) -> String {
        let n = self.violations.first().map(|v| v.x.len()).unwrap_or(0);
        let mut header: Vec<String> = (0..n).map(|j| format!("x{}", j + 1)).collect();
        header.push("facet".into());
        header.push("margin".into());
        let rows: Vec<Vec<f64>> = self
            .violations
            .iter()
            .map(|v| {
                let mut r: Vec<f64> = v.x.iter().copied().collect();
                r.push(v.facet as f64);
                r.push(v.margin);
                r
            })
            .collect();
        crate::io::matrix_csv(&header, &rows)
    }
}

/// Uniform facet, then Dirichlet(1, ..., 1) weights over that facet's vertices.
pub fn sample_boundary(p: &Polytope, rng: &mut ChaCha8Rng) -> (usize, DVector<f64>) {
    let i = rng.gen_range(0..p.s());
    let face = p.facet(i);
    let verts = &p.vertices().vertices;
    let e: Vec<f64> = face.vertex_indices.iter().map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = e.iter().sum();
    let mut x = DVector::zeros(p.n());
    for (k, &vi) in face.vertex_indices.iter().enumerate() {
        x += &verts[vi] * (e[k] / total);
    }
    (i, x)
}

/// Rejection sampling from the bounding box.
pub fn sample_interior(p: &Polytope, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let (lo, hi) = p.bounding_box();
    loop {
        let x = DVector::from_fn(p.n(), |j, _| if hi[j] > lo[j] { rng.gen_range(lo[j]..=hi[j]) } else { lo[j] });
        if p.contains(&x) {
            return x;
        }
    }
}

/// The deterministic sample set used by [`monte_carlo_contractivity`].
pub fn mc_samples(p: &Polytope, n: usize, boundary_frac: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = (boundary_frac * n as f64).round() as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..nb {
        out.push(sample_boundary(p, &mut rng).1);
    }
    for _ in nb..n {
        out.push(sample_interior(p, &mut rng));
    }
    out
}

pub fn scenario_note(n: usize, violations: usize) -> String {
    if violations > 0 {
        return format!("{violations} of {n} samples violate contractivity");
    }
    let eps = (1e3f64).ln() / n as f64;
    format!(
        "no violations in {n} samples; with confidence 0.999 the violating fraction of the sampling distribution is below {:.4}",
        eps.min(1.0)
    )
}

/// Sample `n` states (a `boundary_frac` share on the boundary) and check `F step(x) <= lambda g`.
pub fn monte_carlo_contractivity<S>(
    p: &Polytope,
    step: S,
    lambda: f64,
    n: usize,
    boundary_frac: f64,
    seed: u64,
) -> Result<VerificationReport, VerifyError>
where
    S: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    if n == 0 {
        return Err(VerifyError::NoSamples);
    }
    if !(0.0..=1.0).contains(&boundary_frac) {
        return Err(VerifyError::BadFraction(boundary_frac));
    }
    let samples = mc_samples(p, n, boundary_frac, seed);
    let succ: Vec<DVector<f64>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            samples.par_iter().map(&step).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            samples.iter().map(&step).collect()
        }
    };
    let s = p.s();
    let mut worst = DVector::from_element(s, f64::INFINITY);
    let mut violations = Vec::new();
    let mut scaling: f64 = f64::NEG_INFINITY;
    let mut bad_samples = 0usize;
    for (x, xp) in samples.iter().zip(&succ) {
        let fx = p.f() * xp;
        let before = violations.len();
        for i in 0..s {
            let gi = p.g()[i];
            let margin = lambda * gi - fx[i];
            worst[i] = worst[i].min(margin);
            if gi > 0.0 {
                scaling = scaling.max(fx[i] / gi);
            }
            if !(margin >= -MC_TOL * (1.0 + gi.abs())) {
                violations.push(Violation { x: x.clone(), facet: i, margin });
            }
        }
        if violations.len() > before {
            bad_samples += 1;
        }
    }
    let passed = violations.is_empty();
    let confidence_note = scenario_note(n, bad_samples);
    Ok(VerificationReport {
        lambda,
        samples: n,
        boundary_fraction: boundary_frac,
        seed,
        worst_margin: worst,
        violations,
        certified_scaling: scaling,
        passed,
        confidence_note,
    })
}

/// Vector-valued function with a Jacobian, used as a DC component.
pub trait VectorField {
    fn value(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Majorizer `R(x, x_ref)` of `c'(beta(x) - phi(x))`: components with `c_k >= 0` linearize `phi`,
/// the others linearize `beta`, both at `x_ref`.
pub fn dc_majorizer(
    beta: &dyn VectorField,
    phi: &dyn VectorField,
    c: &DVector<f64>,
    x: &DVector<f64>,
    x_ref: &DVector<f64>,
) -> f64 {
    let (bx, px) = (beta.value(x), phi.value(x));
    let (br, pr) = (beta.value(x_ref), phi.value(x_ref));
    let (jb, jp) = (beta.jacobian(x_ref), phi.jacobian(x_ref));
    let dx = x - x_ref;
    let mut r = 0.0;
    for k in 0..c.len() {
        if c[k] == 0.0 {
            continue;
        }
        if c[k] > 0.0 {
            r += c[k] * (bx[k] - pr[k] - jp.row(k).dot(&dx.transpose()));
        } else {
            r += c[k] * (br[k] + jb.row(k).dot(&dx.transpose()) - px[k]);
        }
    }
    r
}

/// `x -> (eps_k / 2) |x|^2` per component.
#[derive(Debug, Clone)]
pub struct QuadraticField {
    pub eps: DVector<f64>,
}

impl VectorField for QuadraticField {
    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.eps * (0.5 * x.norm_squared())
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        &self.eps * x.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisDictionary;
    use crate::presets;
    use proptest::prelude::*;
    use rand::Rng;

    fn example1_zero_input() -> (ClosedLoopRep, Polytope, Remainder) {
        let rep = ClosedLoopRep {
            g_k1: DMatrix::zeros(1, 1),
            g_k2: DMatrix::zeros(1, 1),
            k1: DMatrix::zeros(1, 1),
            k2: DMatrix::zeros(1, 1),
            m1: DMatrix::from_element(1, 1, 1.2),
            m2: DMatrix::from_element(1, 1, -0.2),
        };
        (rep, presets::example1_interval(), presets::example1_plant().remainder)
    }

    #[test]
    fn example_one_facet_maps() {
        let (rep, p, rem) = example1_zero_input();
        let maps = facet_maps(&rep, &p);
        let h2 = |x: f64| -maps[1].eval(&rem, &DVector::from_element(1, x));
        assert!((h2(-1.0) + 1.0).abs() < 1e-12);
        assert!(h2(0.0).abs() < 1e-12);
        for x in [-0.9, -0.3, 0.0] {
            let v = DVector::from_element(1, x);
            assert!((maps[0].eval(&rem, &v) + maps[1].eval(&rem, &v)).abs() < 1e-14);
        }
    }

    #[test]
    fn example_one_grid_extremes() {
        let (rep, p, rem) = example1_zero_input();
        let maps = facet_maps(&rep, &p);
        let (mx, arg) = grid_max_oracle(|x| maps[0].eval(&rem, x), &p, 401).unwrap();
        assert!(mx.abs() < 1e-8 && arg[0].abs() < 1e-8);
        let (neg_min, arg) = grid_max_oracle(|x| maps[1].eval(&rem, x), &p, 401).unwrap();
        assert!((neg_min - 1.0).abs() < 1e-8 && (arg[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn example_two_grid_matches_corner() {
        let (a11, a12, cu, r1, r2) = (0.5, 0.1, 0.2, 1.0, 1.0);
        let p = Polytope::from_halfspaces(
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            DVector::from_vec(vec![r1, r2, 0.0, 0.0]),
            1e-9,
        )
        .unwrap();
        let h1 = |x: &DVector<f64>| a11 * x[0] + a12 * x[1] + cu * x[1].powi(3);
        let (mx, _) = grid_max_oracle(h1, &p, 201).unwrap();
        let (lip, exact) = lipschitz_bound_vs_exact(a11, a12, cu, r1, r2);
        assert!((mx - exact).abs() < 1e-12);
        assert!((lip - 1.2).abs() < 1e-12 && (exact - 0.8).abs() < 1e-12);
        assert_eq!(lipschitz_bound_vs_exact(a11, a12, 0.0, r1, r2).0, lipschitz_bound_vs_exact(a11, a12, 0.0, r1, r2).1);
        let (l0, e0) = lipschitz_bound_vs_exact(a11, a12, cu, r1, 0.0);
        assert!((l0 - a11 * r1).abs() < 1e-15 && (e0 - a11 * r1).abs() < 1e-15);
    }

    #[test]
    fn grid_oracle_dimension_guard() {
        let p = Polytope::hypercube(4, 1.0).unwrap();
        assert!(matches!(grid_max_oracle(|_| 0.0, &p, 5), Err(VerifyError::DimensionTooLarge { .. })));
    }

    #[test]
    fn linear_map_max_at_vertex() {
        let p = Polytope::hypercube(2, 0.7).unwrap();
        let c = DVector::from_vec(vec![0.3, -1.1]);
        let (mx, _) = grid_max_oracle(|x| c.dot(x), &p, 201).unwrap();
        assert!((mx - 0.7 * (0.3 + 1.1)).abs() < 1e-12);
    }

    #[test]
    fn convex_map_grid_equals_vertex_max() {
        let p = Polytope::from_halfspaces(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
            1e-9,
        )
        .unwrap();
        let f = |x: &DVector<f64>| (x[0] - 0.2).powi(2) + x[1].powi(4) + 0.1 * x[0];
        let (mx, _) = grid_max_oracle(f, &p, 201).unwrap();
        let vmax = p.vertices().vertices.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        assert!((mx - vmax).abs() < 1e-9);
    }

    #[test]
    fn mc_example_one_passes_with_zero_margin() {
        let plant = presets::example1_plant();
        let p = presets::example1_interval();
        let step = |x: &DVector<f64>| plant.step(x, &DVector::zeros(1), &DVector::zeros(1));
        let r = monte_carlo_contractivity(&p, step, 1.0, 2000, 0.7, 3).unwrap();
        assert!(r.passed);
        assert!(r.worst_margin.min().abs() < 1e-12);
    }

    #[test]
    fn mc_detects_expansion_and_is_deterministic() {
        let p = Polytope::hypercube(2, 1.0).unwrap();
        let step = |x: &DVector<f64>| x * 1.1;
        let a = monte_carlo_contractivity(&p, step, 1.0, 500, 0.7, 5).unwrap();
        let b = monte_carlo_contractivity(&p, step, 1.0, 500, 0.7, 5).unwrap();
        assert!(!a.passed);
        assert_eq!(a, b);
        assert_eq!(monte_carlo_contractivity(&p, step, 1.0, 0, 0.7, 5), Err(VerifyError::NoSamples));
    }

    #[test]
    fn boundary_samples_touch_facets_uniformly() {
        let p = Polytope::hypercube(3, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6000;
        let mut counts = vec![0usize; p.s()];
        for _ in 0..n {
            let (i, x) = sample_boundary(&p, &mut rng);
            counts[i] += 1;
            assert!(!p.active_set(&x).is_empty());
            assert!(p.active_set(&x).contains(&i));
        }
        let mean = n as f64 / p.s() as f64;
        let sd = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        assert!(counts.iter().all(|c| (*c as f64 - mean).abs() <= 3.0 * sd), "{counts:?}");
    }

    #[test]
    fn majorizer_quadratic_case_and_tangency() {
        // beta = H + phi with H = w'Q for the cubic dictionary; c = e_i picks one component.
        let rem = Remainder::new(BasisDictionary::monomial_dictionary(&[vec![3, 0], vec![0, 2]], 2).unwrap());
        struct Beta<'a> {
            rem: &'a Remainder,
            w: DVector<f64>,
            eps: f64,
        }
        impl VectorField for Beta<'_> {
            fn value(&self, x: &DVector<f64>) -> DVector<f64> {
                DVector::from_element(1, self.w.dot(&self.rem.q(x)) + 0.5 * self.eps * x.norm_squared())
            }
            fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
                let g = self.rem.q_jacobian(x).transpose() * &self.w + x * self.eps;
                DMatrix::from_iterator(1, g.len(), g.iter().copied())
            }
        }
        let beta = Beta { rem: &rem, w: DVector::from_vec(vec![1.0, -0.5]), eps: 2.0 };
        let phi = QuadraticField { eps: DVector::from_element(1, 2.0) };
        let c = DVector::from_element(1, 1.0);
        let x = DVector::from_vec(vec![0.3, -0.4]);
        let xr = DVector::from_vec(vec![0.5, 0.5]);
        let expected = beta.value(&x)[0] - 2.0 * xr.dot(&x) + 0.5 * 2.0 * xr.norm_squared();
        assert!((dc_majorizer(&beta, &phi, &c, &x, &xr) - expected).abs() < 1e-12);
        let h = beta.value(&xr)[0] - phi.value(&xr)[0];
        assert!((dc_majorizer(&beta, &phi, &c, &xr, &xr) - h).abs() < 1e-12);
        assert_eq!(dc_majorizer(&beta, &phi, &DVector::zeros(1), &x, &xr), 0.0);
    }

    struct Convex {
        a: DMatrix<f64>,
    }

    /// Components `k -> sum_j a_kj * x_j^2 + a_k0 * exp(x_0)` with nonnegative `a`.
    impl VectorField for Convex {
        fn value(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_fn(self.a.nrows(), |k, _| {
                (0..x.len()).map(|j| self.a[(k, j)] * x[j] * x[j]).sum::<f64>() + self.a[(k, 0)] * x[0].exp()
            })
        }
        fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_fn(self.a.nrows(), x.len(), |k, j| {
                2.0 * self.a[(k, j)] * x[j] + if j == 0 { self.a[(k, 0)] * x[0].exp() } else { 0.0 }
            })
        }
    }

    proptest! {
        #[test]
        fn majorizer_bounds_dc_function(
            seed in 0u64..u64::MAX,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, n) = (3, 2);
            let beta = Convex { a: DMatrix::from_fn(s, n, |_, _| rng.gen_range(0.0..2.0)) };
            let phi = Convex { a: DMatrix::from_fn(s, n, |_, _| rng.gen_range(0.0..2.0)) };
            let c = DVector::from_fn(s, |_, _| rng.gen_range(-1.0..1.0));
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let xr = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let h = c.dot(&(beta.value(&x) - phi.value(&x)));
            prop_assert!(h <= dc_majorizer(&beta, &phi, &c, &x, &xr) + 1e-9);
        }
    }
}
