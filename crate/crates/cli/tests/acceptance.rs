//! One pass/fail line per acceptance criterion. Exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polysafe_core::basis::{BasisDictionary, Remainder};
use polysafe_core::plant_data::{collect_experiment, ExperimentDesign, PlantModel, X0Sampling};
use polysafe_core::polytope::Polytope;
use polysafe_core::presets::{
    example1_design, example1_interval, example1_plant, paper_box, paper_design, paper_dictionary, paper_plant,
};
use polysafe_core::runtime::{simulate_vertex_bundle, Controller, Disturbance};
use polysafe_core::synthesis::{
    certify, lipschitz_aggregate, maximize_radius, synth_dc_global, synth_hybrid, synth_lipschitz, synthesize,
    CertificateSpec, InputPolytope, Mode, RadiusSearch, SynthesisResult, Theorem, VerifySettings,
};
use polysafe_core::verify::{
    dc_majorizer, grid_cell, grid_max_oracle, lipschitz_bound_vs_exact, mc_samples, monte_carlo_contractivity,
    QuadraticField, VectorField,
};

type Check = Result<(bool, String), String>;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn paper_spec(seed: u64, h_w: f64) -> CertificateSpec {
    let plant = paper_plant(-0.01, -0.005, h_w);
    let data = collect_experiment(&plant, &paper_design(20, seed), &paper_box(1.0)).expect("experiment");
    let mut s = CertificateSpec::new(paper_box(1.0), data, Remainder::new(paper_dictionary()));
    s.h_w = h_w;
    s
}

/// Sup of `F_i x+` on the true noise-free plant under `ctrl`, per facet, by the grid oracle.
fn facet_sups(plant: &PlantModel, ctrl: &Controller, p: &Polytope, grid: usize) -> Result<Vec<f64>, String> {
    let zero = DVector::zeros(plant.n());
    let mut out = Vec::new();
    for i in 0..p.s() {
        let fi = p.f().row(i).into_owned();
        let h = |x: &DVector<f64>| match ctrl.eval(x) {
            Ok(u) => (&fi * plant.step(x, &u, &zero))[0],
            Err(_) => f64::INFINITY,
        };
        out.push(grid_max_oracle(h, p, grid).map_err(e)?.0);
    }
    Ok(out)
}

fn c1_example_one() -> Check {
    let plant = example1_plant();
    let p = example1_interval();
    let f = |x: &DVector<f64>| 1.2 * x[0] - 0.2 * x[0].powi(3);
    let (mx, at_max) = grid_max_oracle(f, &p, 401).map_err(e)?;
    let (neg_min, at_min) = grid_max_oracle(|x| -f(x), &p, 401).map_err(e)?;
    let extremes = mx.abs() <= 1e-8 && at_max[0].abs() <= 1e-8 && (neg_min - 1.0).abs() <= 1e-8 && (at_min[0] + 1.0).abs() <= 1e-8;
    let zero = DVector::zeros(1);
    let mc = monte_carlo_contractivity(&p, |x| plant.step(x, &zero, &zero), 1.0, 2000, 0.7, 0).map_err(e)?;
    let data = collect_experiment(&plant, &example1_design(3), &p).map_err(e)?;
    let res = synth_dc_global(&CertificateSpec::new(p, data, plant.remainder.clone())).map_err(e)?;
    let eps = res.slack("eps").map(|m| m.amax()).unwrap_or(f64::NAN);
    let ok = extremes && mc.passed && res.is_optimal() && eps <= 1e-8;
    Ok((
        ok,
        format!(
            "max f = {mx:.2e} at {:.2e}, min f = {:.10} at {:.10}; MC passed = {}; Theorem 2 {:?} with eps* = {eps:.2e}",
            at_max[0], -neg_min, at_min[0], mc.passed, res.status
        ),
    ))
}

fn c2_example_two() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut strict = 0;
    for k in 0..20 {
        let a11 = rng.gen_range(0.0..1.0);
        let a12 = rng.gen_range(0.0..1.0);
        // every fifth draw has no cubic term, where the two bounds coincide
        let cu = if k % 5 == 4 { 0.0 } else { rng.gen_range(0.0..0.5) };
        let (r1, r2) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
        let (lip, exact) = lipschitz_bound_vs_exact(a11, a12, cu, r1, r2);
        let oracle = a11 * r1 + a12 * r2 + cu * r2.powi(3);
        if (exact - oracle).abs() > 1e-12 || exact > lip + 1e-12 {
            return Ok((false, format!("draw {k}: exact {exact} oracle {oracle} lipschitz {lip}")));
        }
        if cu * r2 > 0.0 {
            if !(exact < lip) {
                return Ok((false, format!("draw {k}: no strict gap with c_u r2 = {}", cu * r2)));
            }
            strict += 1;
        }
    }
    Ok((true, format!("20 draws, exact <= Lipschitz everywhere, strict on all {strict} draws with c_u r2 > 0")))
}

struct RadiusTable {
    thm1: Vec<f64>,
    unstructured: Vec<f64>,
    structured: Vec<f64>,
    active_only: Vec<f64>,
}

fn r_star(spec: &CertificateSpec, th: Theorem, mode: Mode) -> Result<f64, String> {
    Ok(maximize_radius(spec, th, mode, &RadiusSearch::default()).map_err(e)?.r_star)
}

fn c3_theorem_one(table: &mut RadiusTable) -> Check {
    let mut feasible = true;
    for seed in SEEDS {
        let spec = paper_spec(seed, 0.0);
        let at_half = synth_lipschitz(&spec.with_polytope(paper_box(0.5))).map_err(e)?;
        feasible &= at_half.is_optimal();
        table.thm1.push(r_star(&spec, Theorem::Lipschitz, Mode::Unstructured)?);
    }
    let in_band = table.thm1.iter().all(|r| (0.45..=0.80).contains(r));
    Ok((feasible && in_band, format!("feasible at r = 0.5 on all seeds: {feasible}; r* = {:?} (band [0.45, 0.80])", table.thm1)))
}

fn c4_orderings(table: &mut RadiusTable) -> Check {
    let tol = RadiusSearch::default().tol;
    for seed in SEEDS {
        let spec = paper_spec(seed, 0.0);
        table.unstructured.push(r_star(&spec, Theorem::Vertexwise, Mode::Unstructured)?);
        table.structured.push(r_star(&spec, Theorem::Vertexwise, Mode::Structured)?);
        table.active_only.push(r_star(&spec, Theorem::Vertexwise, Mode::ActiveOnly)?);
    }
    let mut ok = true;
    for k in 0..SEEDS.len() {
        ok &= table.structured[k] - table.unstructured[k] >= -tol;
        ok &= table.unstructured[k] - table.thm1.get(k).copied().unwrap_or(f64::INFINITY) >= -tol;
        ok &= table.active_only[k] - table.structured[k] >= -tol;
    }
    Ok((
        ok,
        format!(
            "per seed r*: active_only {:?} >= structured {:?} >= unstructured {:?} >= Theorem 1 {:?}",
            table.active_only, table.structured, table.unstructured, table.thm1
        ),
    ))
}

/// Two-state plant with a cubic/quadratic dictionary and a single input on the second state.
fn random_system(rng: &mut ChaCha8Rng) -> PlantModel {
    let rem = Remainder::new(BasisDictionary::monomial_dictionary(&[vec![3, 0], vec![2, 0], vec![0, 3]], 2).unwrap());
    let a1 = DMatrix::from_row_slice(
        2,
        2,
        &[rng.gen_range(0.3..0.8), rng.gen_range(-0.2..0.2), rng.gen_range(-0.3..0.3), rng.gen_range(0.5..1.2)],
    );
    let mut a2 = DMatrix::zeros(2, 3);
    a2[(0, 0)] = rng.gen_range(-0.1..0.1);
    a2[(0, 1)] = rng.gen_range(-0.1..0.1);
    for j in 0..3 {
        a2[(1, j)] = rng.gen_range(-0.3..0.3);
    }
    PlantModel::new(a1, a2, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), rem, 0.0).unwrap()
}

fn small_spec(plant: &PlantModel, seed: u64) -> CertificateSpec {
    let p = Polytope::hypercube(2, 0.5).unwrap();
    let design = ExperimentDesign { t: 15, input_amplitude: 2.0, x0: X0Sampling::Box { half_width: 2.0 }, episode_length: Some(1), seed };
    let data = collect_experiment(plant, &design, &p).unwrap();
    CertificateSpec::new(p, data, plant.remainder.clone())
}

fn small_fixtures() -> Vec<(PlantModel, CertificateSpec, SynthesisResult)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();
    for draw in 0..60u64 {
        if out.len() == 10 {
            break;
        }
        let plant = random_system(&mut rng);
        let spec = small_spec(&plant, draw);
        if let Ok(t1) = synth_lipschitz(&spec) {
            if t1.is_optimal() {
                out.push((plant, spec, t1));
            }
        }
    }
    out
}

fn c5_dominance(fixtures: &[(PlantModel, CertificateSpec, SynthesisResult)]) -> Check {
    if fixtures.len() < 10 {
        return Ok((false, format!("only {} random systems with a feasible Theorem 1", fixtures.len())));
    }
    let mut worst_gap = f64::NEG_INFINITY;
    let (mut sum_obj, mut sum_agg) = (0.0, 0.0);
    for (k, (_, spec, t1)) in fixtures.iter().enumerate() {
        let agg = lipschitz_aggregate(spec, &t1.global_rep().unwrap().m2);
        let hy = synth_hybrid(spec).map_err(e)?;
        if !hy.is_optimal() {
            return Ok((false, format!("system {k}: hybrid certificate {:?}", hy.status)));
        }
        worst_gap = worst_gap.max(hy.objective - agg);
        sum_obj += hy.objective;
        sum_agg += agg;
        if hy.objective > agg + 1e-6 {
            return Ok((false, format!("system {k}: objective {} > aggregate {agg}", hy.objective)));
        }
    }
    Ok((
        true,
        format!("10 systems, objective - Theorem 1 aggregate <= {worst_gap:.3e}; totals {sum_obj:.4} vs {sum_agg:.4}"),
    ))
}

fn c6_soundness(fixtures: &[(PlantModel, CertificateSpec, SynthesisResult)]) -> Check {
    let grid = 101;
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut check = |plant: &PlantModel, spec: &CertificateSpec, res: &SynthesisResult, label: &str| -> Result<Option<String>, String> {
        if !res.is_optimal() {
            return Ok(None);
        }
        let ctrl = res.controller(&spec.remainder).ok_or("controller")?;
        let sups = facet_sups(plant, &ctrl, &spec.polytope, grid)?;
        let slack = 2.0 * grid_cell(&spec.polytope, grid);
        checked += 1;
        for (i, s) in sups.iter().enumerate() {
            let excess = s - spec.lambda * spec.polytope.g()[i];
            worst = worst.max(excess);
            if excess > slack {
                return Ok(Some(format!("{label}: facet {i} sup {s} exceeds lambda g by {excess}")));
            }
        }
        Ok(None)
    };

    let plant = example1_plant();
    let p = example1_interval();
    let data = collect_experiment(&plant, &example1_design(3), &p).map_err(e)?;
    let spec = CertificateSpec::new(p, data, plant.remainder.clone());
    if let Some(m) = check(&plant, &spec, &synth_dc_global(&spec).map_err(e)?, "example 1, Theorem 2")? {
        return Ok((false, m));
    }
    let cases = [
        (Theorem::Lipschitz, Mode::Unstructured),
        (Theorem::DcGlobal, Mode::Unstructured),
        (Theorem::Hybrid, Mode::Unstructured),
        (Theorem::Vertexwise, Mode::Unstructured),
        (Theorem::Vertexwise, Mode::Structured),
        (Theorem::Vertexwise, Mode::ActiveOnly),
        (Theorem::Robust, Mode::Unstructured),
    ];
    for (k, (plant, spec, _)) in fixtures.iter().enumerate() {
        for (th, mode) in cases {
            let res = synthesize(spec, th, mode).map_err(e)?;
            if let Some(m) = check(plant, spec, &res, &format!("system {k}, theorem {th} {mode}"))? {
                return Ok((false, m));
            }
        }
    }
    let n2 = checked;

    let mut mc_runs = 0;
    let settings = VerifySettings { policy: polysafe_core::synthesis::VerifyPolicy::Always, ..VerifySettings::default() };
    let paper = paper_spec(1, 0.0);
    for (th, mode, r) in [
        (Theorem::Lipschitz, Mode::Unstructured, 0.5),
        (Theorem::Vertexwise, Mode::Unstructured, 1.0),
        (Theorem::Vertexwise, Mode::Structured, 1.0),
        (Theorem::Vertexwise, Mode::ActiveOnly, 1.0),
        (Theorem::Robust, Mode::Unstructured, 1.0),
    ] {
        let c = certify(&paper.with_polytope(paper_box(r)), th, mode, &settings).map_err(e)?;
        let report = c.report.ok_or("no report")?;
        mc_runs += 1;
        if !report.violations.is_empty() {
            return Ok((false, format!("paper system, theorem {th} {mode}: {} violations", report.violations.len())));
        }
    }
    Ok((true, format!("{n2} optimal n <= 2 certificates within the grid slack (worst excess {worst:.2e}); {mc_runs} paper-system certificates with 0 of 2000 MC violations")))
}

fn c7_lyapunov() -> Check {
    let plant = paper_plant(-0.01, -0.005, 0.0);
    let base = paper_spec(1, 0.0);
    let mut worst = f64::NEG_INFINITY;
    let mut runs = 0;
    for (th, mode, r, h_w) in [
        (Theorem::Lipschitz, Mode::Unstructured, 0.5, 0.0),
        (Theorem::Vertexwise, Mode::Unstructured, 1.0, 0.0),
        (Theorem::Vertexwise, Mode::Structured, 1.0, 0.0),
        (Theorem::Vertexwise, Mode::ActiveOnly, 1.0, 0.0),
        (Theorem::Robust, Mode::Unstructured, 0.8, 0.03),
    ] {
        let spec = if h_w > 0.0 { paper_spec(1, h_w) } else { base.clone() }.with_polytope(paper_box(r));
        let res = synthesize(&spec, th, mode).map_err(e)?;
        if !res.is_optimal() {
            return Ok((false, format!("theorem {th} {mode} at r = {r}: {:?}", res.status)));
        }
        let ctrl = res.controller(&spec.remainder).ok_or("controller")?;
        for tr in simulate_vertex_bundle(&plant, &ctrl, &spec.polytope, 200, Disturbance::Zero, 0) {
            runs += 1;
            worst = worst.max(tr.max_gauge_increase(spec.lambda));
        }
    }
    if worst > 1e-6 {
        return Ok((false, format!("V(x+) - lambda V(x) reached {worst:.3e}")));
    }

    let noisy = paper_plant(-0.01, -0.005, 0.03);
    let spec = paper_spec(1, 0.03).with_polytope(paper_box(0.8));
    let res = synthesize(&spec, Theorem::Robust, Mode::Unstructured).map_err(e)?;
    let ctrl = res.controller(&spec.remainder).ok_or("robust controller")?;
    let nv = spec.polytope.vertices().len() as u64;
    let mut left = 0;
    let mut disturbed = 0;
    for k in 0..50u64 {
        for tr in simulate_vertex_bundle(&noisy, &ctrl, &spec.polytope, 200, Disturbance::Uniform { h_w: 0.03 }, 1000 + k * nv) {
            disturbed += 1;
            if tr.violated_at.is_some() {
                left += 1;
            }
        }
    }
    Ok((
        left == 0,
        format!("{runs} nominal trajectories, max V(x+) - lambda V(x) = {worst:.2e}; {disturbed} disturbed Theorem 4 trajectories, {left} left the set"),
    ))
}

fn c8_inputs() -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    for mode in [Mode::Unstructured, Mode::Structured, Mode::ActiveOnly] {
        let mut spec = paper_spec(1, 0.0).with_polytope(paper_box(0.6));
        spec.input = Some(InputPolytope::symmetric_box(1, 1.0));
        let res = synthesize(&spec, Theorem::Vertexwise, mode).map_err(e)?;
        if !res.is_optimal() {
            ok = false;
            details.push(format!("{mode}: {:?}", res.status));
            continue;
        }
        let ctrl = res.controller(&spec.remainder).ok_or("controller")?;
        let mut umax: f64 = 0.0;
        for x in mc_samples(&spec.polytope, 10_000, 0.5, 8) {
            umax = umax.max(ctrl.eval(&x).map_err(e)?.amax());
        }
        ok &= umax <= 1.0 + 1e-6;
        details.push(format!("{mode} max |u| = {umax:.6}"));
    }
    Ok((ok, format!("r = 0.6, 10^4 states each: {}", details.join(", "))))
}

/// `x -> a_k exp(d_k' x) + (s_k/2)|x|^2`, convex per component.
struct ExpField {
    a: Vec<f64>,
    d: Vec<DVector<f64>>,
    s: Vec<f64>,
}

impl VectorField for ExpField {
    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.a.len(), |k, _| self.a[k] * self.d[k].dot(x).exp() + 0.5 * self.s[k] * x.norm_squared())
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        DMatrix::from_fn(self.a.len(), n, |k, j| self.a[k] * self.d[k].dot(x).exp() * self.d[k][j] + self.s[k] * x[j])
    }
}

fn c9_majorizer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_gap = f64::INFINITY;
    let mut worst_tangency: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let field = |rng: &mut ChaCha8Rng| ExpField {
            a: (0..m).map(|_| rng.gen_range(0.0..1.0)).collect(),
            d: (0..m).map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))).collect(),
            s: (0..m).map(|_| rng.gen_range(0.0..2.0)).collect(),
        };
        let beta = field(&mut rng);
        let phi_exp = field(&mut rng);
        let quad = QuadraticField { eps: DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0)) };
        let (beta, phi): (Box<dyn VectorField>, Box<dyn VectorField>) =
            if rng.gen_bool(0.5) { (Box::new(beta), Box::new(phi_exp)) } else { (Box::new(beta), Box::new(quad)) };
        let c = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
        let x_ref = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
        let f = |y: &DVector<f64>| c.dot(&(beta.value(y) - phi.value(y)));
        let r = dc_majorizer(beta.as_ref(), phi.as_ref(), &c, &x, &x_ref);
        worst_gap = worst_gap.min(r - f(&x));
        let r0 = dc_majorizer(beta.as_ref(), phi.as_ref(), &c, &x_ref, &x_ref);
        worst_tangency = worst_tangency.max((r0 - f(&x_ref)).abs());
    }
    Ok((
        worst_gap >= -1e-10 && worst_tangency <= 1e-9,
        format!("10^4 triples: min R(x, x_ref) - f(x) = {worst_gap:.3e}, max tangency error {worst_tangency:.3e}"),
    ))
}

fn strip_timing(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map(|(a, _)| a).unwrap_or(l)).collect::<Vec<_>>().join("\n")
}

fn c10_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "plant = { preset = \"paper-sysV\" }\nseeds = [1, 2]\n").map_err(e)?;
    let run = |out: &Path| -> Result<String, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_polysafe"))
            .args(["reproduce", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .stderr(std::process::Stdio::null())
            .status()
            .map_err(e)?;
        if !status.success() {
            return Err(format!("reproduce exited with {status}"));
        }
        std::fs::read_to_string(out.join("summary.csv")).map_err(e)
    };
    let a = run(&dir.path().join("a"))?;
    let b = run(&dir.path().join("b"))?;
    let rows = a.lines().count() - 1;
    Ok((strip_timing(&a) == strip_timing(&b), format!("two runs, {rows} rows, identical outside the timing column")))
}

fn main() {
    let mut failed = 0;
    let mut report = |k: usize, t: Instant, c: Check| {
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = c.unwrap_or_else(|err| (false, format!("error: {err}")));
        if !ok {
            failed += 1;
        }
        println!("criterion {k:>2} {} ({secs:.1}s): {detail}", if ok { "PASS" } else { "FAIL" });
    };

    let t = Instant::now();
    let c = c1_example_one().map(|(ok, d)| (ok && t.elapsed().as_secs_f64() < 5.0, d));
    report(1, t, c);

    let t = Instant::now();
    let c = c2_example_two().map(|(ok, d)| (ok && t.elapsed().as_secs_f64() < 1.0, d));
    report(2, t, c);

    let mut table = RadiusTable { thm1: Vec::new(), unstructured: Vec::new(), structured: Vec::new(), active_only: Vec::new() };
    let t = Instant::now();
    let c = c3_theorem_one(&mut table).map(|(ok, d)| (ok && t.elapsed().as_secs_f64() < 60.0, d));
    report(3, t, c);

    let t = Instant::now();
    let c = c4_orderings(&mut table);
    report(4, t, c);

    let t = Instant::now();
    let fixtures = small_fixtures();
    let c = c5_dominance(&fixtures).map(|(ok, d)| (ok && t.elapsed().as_secs_f64() < 120.0, d));
    report(5, t, c);

    let t = Instant::now();
    report(6, t, c6_soundness(&fixtures));

    let t = Instant::now();
    report(7, t, c7_lyapunov());

    let t = Instant::now();
    report(8, t, c8_inputs());

    let t = Instant::now();
    report(9, t, c9_majorizer());

    let t = Instant::now();
    report(10, t, c10_determinism());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
