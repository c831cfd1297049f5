use crate::conic::{dot, ExprMat, LinExpr, Program};
use crate::io::Mat;

use super::curvature::{add_curvature, enforcement_points, identity};
use super::param::DataParam;
use super::thm1::{add_dual_matching, dual_row_times_g};
use super::{collect_slacks, CertificateSpec, Gains, SynthesisError, SynthesisResult, Theorem};

/// Exact convex part plus Lipschitz residual. Each row `F_i M2` splits into `z_i + r_i`; `z_i' Q` must
/// be convex on representative and unpaired facets, `r_i' Q` is bounded through per-component
/// Lipschitz constants. A mirror facet reuses `-z` of its representative, which is nonpositive
/// on the set because `z' Q` is convex with zero value and slope at the origin.
pub fn synth_hybrid(spec: &CertificateSpec) -> Result<SynthesisResult, SynthesisError> {
    spec.validate()?;
    spec.require_disturbance_free("the hybrid certificate")?;
    let p = &spec.polytope;
    let d = &spec.data;
    let rem = &spec.remainder;
    let (f, s, n, nq) = (p.f(), p.s(), p.n(), d.nq());
    let g: Vec<f64> = p.g().iter().copied().collect();
    let verts = &p.vertices().vertices;

    let partition = p.sign_symmetric_partition();
    let origin_inside = p.contains(&nalgebra::DVector::zeros(n));
    let is_mirror = |j: usize| origin_inside && partition.is_mirror(j);

    let mut prog = Program::new();
    prog.set_group("parameterization");
    let param = DataParam::declare(&mut prog, d)?;
    if let Some(k) = &spec.options.fixed_gains {
        param.pin_gains(&mut prog, d, k)?;
    }
    let (m1, m2) = param.closed_loop(d);
    let pm = add_dual_matching(&mut prog, spec, &m1, "P")?;
    let w = ExprMat::lmul(f, &m2);

    let env = rem.lipschitz_on(p, spec.options.grid_per_axis);
    let lk = &env.per_component;
    let (_, r0) = p.max_vertex_norms();

    let t = prog.declare("t", s, 1)?;
    let z = prog.declare("z", s, nq)?;
    let r = prog.declare("r", s, nq)?;
    prog.set_group("residual_sign");
    let k = prog.declare_nonneg("k", s, nq)?;
    let a = prog.declare_nonneg("a", s, nq)?;

    prog.set_group("split");
    prog.add_eq_mat(&w, &z.mat().add(&r.mat()))?;

    prog.set_group("residual_box");
    for i in 0..s {
        for c in 0..nq {
            let lr = r.at(i, c) * lk[c];
            prog.add_le(lr.clone(), k.at(i, c))?;
            prog.add_le(-lr, k.at(i, c))?;
            let lw = (z.at(i, c) + r.at(i, c)) * lk[c];
            prog.add_le(lw.clone(), a.at(i, c))?;
            prog.add_le(-lw, a.at(i, c))?;
        }
    }
    prog.set_group("dominance");
    for i in 0..s {
        let ki = lin_sum(&k, i, nq);
        let ai = lin_sum(&a, i, nq);
        prog.add_le(ki, ai)?;
    }

    prog.set_group("convexity");
    let (pts, exact) = enforcement_points(p, None, rem, spec.options.grid_per_axis);
    for i in 0..s {
        if !is_mirror(i) {
            add_curvature(&mut prog, rem, &z.mat().row(i), &identity(n), &pts, None)?;
        }
    }

    prog.set_group("mirror");
    for &(rep, mir) in &partition.pair_map {
        if origin_inside {
            for c in 0..nq {
                prog.add_eq(z.at(mir, c) + z.at(rep, c))?;
            }
        }
    }

    prog.set_group("vertex_epigraph");
    for i in 0..s {
        let resid = lin_sum(&k, i, nq) * r0;
        if is_mirror(i) {
            prog.add_le(resid, t.get(i))?;
            continue;
        }
        for v in verts {
            let q = rem.q(v);
            let slackness: Vec<f64> = (0..s).map(|j| g[j] - f.row(j).dot(&v.transpose())).collect();
            let lhs = dot(q.as_slice(), &z.mat().row(i)) - dot(&slackness, &pm.mat().row(i)) + resid.clone();
            prog.add_le(lhs, t.get(i))?;
        }
    }
    prog.set_group("margin");
    for i in 0..s {
        prog.add_le(dual_row_times_g(&pm, &g, i) + t.get(i), LinExpr::constant(spec.lambda * g[i]))?;
    }
    prog.set_objective(k.sum())?;

    let mut sol = prog.solve(&spec.options.solver)?;
    let Some(rep) = param.extract(&mut sol, d)? else {
        return Ok(SynthesisResult::failed(Theorem::Hybrid, None, spec, &sol));
    };
    Ok(SynthesisResult {
        theorem: Theorem::Hybrid,
        mode: None,
        status: sol.status,
        lambda: spec.lambda,
        objective: sol.objective_value,
        polytope: p.clone(),
        gains: Some(Gains::Global { rep }),
        slacks: collect_slacks(&sol, &[&t, &z, &r, &k, &a]),
        duals: vec![Mat(sol.value(&pm))],
        infeasible_groups: Vec::new(),
        requires_verification: !exact || env.grid_fallback,
        programs_solved: 1,
        stats: vec![sol.stats],
    })
}

fn lin_sum(h: &crate::conic::VarHandle, i: usize, cols: usize) -> LinExpr {
    let mut e = LinExpr::zero();
    for c in 0..cols {
        e.add_term(h.index(i, c), 1.0);
    }
    e
}
