use nalgebra::DMatrix;

use crate::conic::{dot, ExprMat, LinExpr, Program};
use crate::io::Mat;

use super::param::DataParam;
use super::{collect_slacks, CertificateSpec, Gains, SynthesisError, SynthesisResult, Theorem};

pub(crate) fn row_l1(f: &DMatrix<f64>, i: usize) -> f64 {
    f.row(i).iter().map(|v| v.abs()).sum()
}

/// `P g + t <= lambda g` and `P F = F M1` for a fresh nonnegative `P`.
pub(crate) fn add_dual_matching(
    prog: &mut Program,
    spec: &CertificateSpec,
    m1: &ExprMat,
    name: &str,
) -> Result<crate::conic::VarHandle, SynthesisError> {
    let (f, s) = (spec.polytope.f(), spec.polytope.s());
    prog.set_group("dual_sign");
    let pm = prog.declare_nonneg(name, s, s)?;
    prog.set_group("dual_matching");
    prog.add_eq_mat(&pm.mat().rmul(f), &ExprMat::lmul(f, m1))?;
    Ok(pm)
}

pub(crate) fn dual_row_times_g(pm: &crate::conic::VarHandle, g: &[f64], i: usize) -> LinExpr {
    dot(g, &pm.mat().row(i))
}

/// Lipschitz bounding of the remainder: `min sum(eta)` subject to `P g + eta <= lambda g`,
/// `P F = F M1` and `eta_i >= L M_x |F_i M2|_2 + nu_i (|G1|_F + L |G2|_F) + h_w |F_i|_1` with
/// `nu_i = T h_w M_x |F_i|_1`.
pub fn synth_lipschitz(spec: &CertificateSpec) -> Result<SynthesisResult, SynthesisError> {
    spec.validate()?;
    let p = &spec.polytope;
    let d = &spec.data;
    let (f, s, n) = (p.f(), p.s(), p.n());
    let g: Vec<f64> = p.g().iter().copied().collect();

    let mut prog = Program::new();
    prog.set_group("parameterization");
    let param = DataParam::declare(&mut prog, d)?;
    if let Some(k) = &spec.options.fixed_gains {
        param.pin_gains(&mut prog, d, k)?;
    }
    let (m1, m2) = param.closed_loop(d);
    let pm = add_dual_matching(&mut prog, spec, &m1, "P")?;

    let env = spec.remainder.lipschitz_on(p, spec.options.grid_per_axis);
    let l = env.scalar;
    let (mx, _) = p.max_vertex_norms();

    prog.set_group("eta_sign");
    let eta = prog.declare_nonneg("eta", s, 1)?;
    let a = prog.declare("a", s, 1)?;
    prog.set_group("remainder_norm");
    let fm2 = ExprMat::lmul(f, &m2);
    for i in 0..s {
        prog.add_soc(fm2.row(i), a.get(i))?;
    }
    let disturbance = if spec.h_w > 0.0 {
        prog.set_group("gain_norm");
        let b = prog.declare("b", 2, 1)?;
        let gfull = param.times(&DMatrix::identity(d.t, d.t));
        prog.add_soc(gfull.columns(0, n).entries().to_vec(), b.get(0))?;
        prog.add_soc(gfull.columns(n, d.nq()).entries().to_vec(), b.get(1))?;
        Some(b)
    } else {
        None
    };

    prog.set_group("eta_bound");
    for i in 0..s {
        let f1 = row_l1(f, i);
        let mut rhs = a.get(i) * (l * mx);
        if let Some(b) = &disturbance {
            let nu = d.t as f64 * spec.h_w * mx * f1;
            rhs += &(b.get(0) * nu);
            rhs += &(b.get(1) * (nu * l));
            rhs += spec.h_w * f1;
        }
        prog.add_le(rhs, eta.get(i))?;
    }
    prog.set_group("margin");
    for i in 0..s {
        prog.add_le(dual_row_times_g(&pm, &g, i) + eta.get(i), LinExpr::constant(spec.lambda * g[i]))?;
    }
    prog.set_objective(eta.sum())?;

    let mut sol = prog.solve(&spec.options.solver)?;
    let Some(rep) = param.extract(&mut sol, d)? else {
        return Ok(SynthesisResult::failed(Theorem::Lipschitz, None, spec, &sol));
    };
    let mut slacks = collect_slacks(&sol, &[&eta, &a]);
    if let Some(b) = &disturbance {
        slacks.insert("b".into(), Mat(sol.value(b)));
    }
    Ok(SynthesisResult {
        theorem: Theorem::Lipschitz,
        mode: None,
        status: sol.status,
        lambda: spec.lambda,
        objective: sol.objective_value,
        polytope: p.clone(),
        gains: Some(Gains::Global { rep }),
        slacks,
        duals: vec![Mat(sol.value(&pm))],
        infeasible_groups: Vec::new(),
        requires_verification: env.grid_fallback,
        programs_solved: 1,
        stats: vec![sol.stats],
    })
}

/// `sum_i sum_k L_k |(F M2)_{ik}|` with the per-component Lipschitz constants; the value the hybrid
/// certificate attains with no convex part.
pub fn lipschitz_aggregate(spec: &CertificateSpec, m2: &DMatrix<f64>) -> f64 {
    let env = spec.remainder.lipschitz_on(&spec.polytope, spec.options.grid_per_axis);
    let fm2 = spec.polytope.f() * m2;
    let mut total = 0.0;
    for i in 0..fm2.nrows() {
        for k in 0..fm2.ncols() {
            total += env.per_component[k] * fm2[(i, k)].abs();
        }
    }
    total
}
