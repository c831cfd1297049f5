use crate::conic::{dot, ExprMat, LinExpr, Program};
use crate::io::Mat;

use super::curvature::{add_curvature, enforcement_points, identity};
use super::param::DataParam;
use super::{collect_slacks, CertificateSpec, Gains, SynthesisError, SynthesisResult, Theorem};

/// Global difference-of-convex certificate. For every vertex `x_l` a dual `P_l` matches the
/// linearization of `c_i' x - eps_i |x|^2 / 2` at `x_l`; the convexified remainder
/// `w_i' Q(x) + eps_i |x|^2 / 2` is bounded by `t_i` at the vertices.
pub fn synth_dc_global(spec: &CertificateSpec) -> Result<SynthesisResult, SynthesisError> {
    spec.validate()?;
    spec.require_disturbance_free("the global difference-of-convex certificate")?;
    let p = &spec.polytope;
    let d = &spec.data;
    let rem = &spec.remainder;
    let (f, s, n) = (p.f(), p.s(), p.n());
    let g: Vec<f64> = p.g().iter().copied().collect();
    let verts = &p.vertices().vertices;

    let mut prog = Program::new();
    prog.set_group("parameterization");
    let param = DataParam::declare(&mut prog, d)?;
    if let Some(k) = &spec.options.fixed_gains {
        param.pin_gains(&mut prog, d, k)?;
    }
    let (m1, m2) = param.closed_loop(d);
    let fm1 = ExprMat::lmul(f, &m1);
    let w = ExprMat::lmul(f, &m2);

    prog.set_group("slack_sign");
    let eps = prog.declare_nonneg("eps", s, 1)?;
    let t = prog.declare_nonneg("t", s, 1)?;

    let mut duals = Vec::with_capacity(verts.len());
    for (l, x) in verts.iter().enumerate() {
        prog.set_group("dual_sign");
        let pl = prog.declare_nonneg(&format!("P{l}"), s, s)?;
        prog.set_group("dual_matching");
        let rhs = ExprMat::from_fn(s, n, |i, j| fm1.get(i, j) - &(eps.get(i) * x[j]));
        prog.add_eq_mat(&pl.mat().rmul(f), &rhs)?;
        prog.set_group("margin");
        let xx = 0.5 * x.norm_squared();
        for i in 0..s {
            let lhs = dot(&g, &pl.mat().row(i)) + t.get(i) + eps.get(i) * xx;
            prog.add_le(lhs, LinExpr::constant(spec.lambda * g[i]))?;
        }
        duals.push(pl);
    }

    prog.set_group("vertex_epigraph");
    for v in verts {
        let q = rem.q(v);
        let vv = 0.5 * v.norm_squared();
        for i in 0..s {
            let lhs = dot(q.as_slice(), &w.row(i)) + eps.get(i) * vv;
            prog.add_le(lhs, t.get(i))?;
        }
    }

    prog.set_group("curvature");
    let (pts, exact) = enforcement_points(p, None, rem, spec.options.grid_per_axis);
    for i in 0..s {
        add_curvature(&mut prog, rem, &w.row(i), &identity(n), &pts, Some(&eps.get(i)))?;
    }
    prog.set_objective(eps.sum())?;

    let mut sol = prog.solve(&spec.options.solver)?;
    let Some(rep) = param.extract(&mut sol, d)? else {
        return Ok(SynthesisResult::failed(Theorem::DcGlobal, None, spec, &sol));
    };
    Ok(SynthesisResult {
        theorem: Theorem::DcGlobal,
        mode: None,
        status: sol.status,
        lambda: spec.lambda,
        objective: sol.objective_value,
        polytope: p.clone(),
        gains: Some(Gains::Global { rep }),
        slacks: collect_slacks(&sol, &[&eps, &t]),
        duals: duals.iter().map(|h| Mat(sol.value(h))).collect(),
        infeasible_groups: Vec::new(),
        requires_verification: !exact,
        programs_solved: 1,
        stats: vec![sol.stats],
    })
}
