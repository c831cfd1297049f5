use nalgebra::DMatrix;

use crate::conic::{dot, ExprMat, LinExpr, Program, VarHandle};
use crate::io::Mat;

use super::curvature::{add_curvature, enforcement_points, identity};
use super::param::DataParam;
use super::thm1::{add_dual_matching, dual_row_times_g, row_l1};
use super::vertexwise::add_input_constraints_inner;
use super::{collect_slacks, CertificateSpec, CurvatureScope, DisturbanceBound, Gains, SynthesisError, SynthesisResult, Theorem};

/// Disturbance-robust difference-of-convex certificate with global gains. The true successor is
/// `M1 x + M2 Q(x) - W0 (G1 x + G2 Q(x)) + w`, so each vertex condition carries a bound `d_i(v)` on
/// `F_i (w - W0 G [x; Q(x)])`.
pub fn synth_robust(spec: &CertificateSpec) -> Result<SynthesisResult, SynthesisError> {
    spec.validate()?;
    let p = &spec.polytope;
    let d = &spec.data;
    let rem = &spec.remainder;
    let (f, s, n, nq) = (p.f(), p.s(), p.n(), d.nq());
    let g: Vec<f64> = p.g().iter().copied().collect();
    let verts = &p.vertices().vertices;
    let hw = spec.h_w;

    let mut prog = Program::new();
    prog.set_group("parameterization");
    let param = DataParam::declare(&mut prog, d)?;
    if let Some(k) = &spec.options.fixed_gains {
        param.pin_gains(&mut prog, d, k)?;
    }
    let (m1, m2) = param.closed_loop(d);
    let pm = add_dual_matching(&mut prog, spec, &m1, "P")?;
    let w = ExprMat::lmul(f, &m2);

    prog.set_group("slack_sign");
    let eps = prog.declare_nonneg("eps", s, 1)?;
    let t = prog.declare("t", s, 1)?;

    // per-vertex aggregate: d_i(v) = coef_i * dist[v]
    let mut extra: Vec<VarHandle> = Vec::new();
    let dist: Vec<LinExpr> = if hw > 0.0 {
        let gfull = param.times(&DMatrix::identity(d.t, d.t));
        let g1 = gfull.columns(0, n);
        let g2 = gfull.columns(n, nq);
        match spec.options.disturbance_bound {
            DisturbanceBound::Exact => {
                prog.set_group("disturbance");
                let qbar = rem.abs_bound_on(p, spec.options.grid_per_axis);
                let babs = prog.declare("b_abs", d.t, nq)?;
                let beta = prog.declare("beta", nq, 1)?;
                for k in 0..nq {
                    for r in 0..d.t {
                        prog.add_le(g2.get(r, k).clone(), babs.at(r, k))?;
                        prog.add_le(-g2.get(r, k).clone(), babs.at(r, k))?;
                    }
                    let col: LinExpr = (0..d.t).fold(LinExpr::zero(), |acc, r| acc + babs.at(r, k));
                    prog.add_le(col, beta.get(k))?;
                }
                let qterm = dot(&qbar, &beta.vec());
                let av = prog.declare("a_abs", d.t, verts.len())?;
                let mut out = Vec::with_capacity(verts.len());
                for (l, v) in verts.iter().enumerate() {
                    let gv = g1.mul_vec(v);
                    for (r, e) in gv.iter().enumerate() {
                        prog.add_le(e.clone(), av.at(r, l))?;
                        prog.add_le(-e.clone(), av.at(r, l))?;
                    }
                    let sum: LinExpr = (0..d.t).fold(LinExpr::zero(), |acc, r| acc + av.at(r, l));
                    out.push(sum + qterm.clone() + 1.0);
                }
                extra.extend([babs, beta, av]);
                out
            }
            DisturbanceBound::PaperVertex => {
                prog.set_group("disturbance");
                let xi1 = prog.declare("xi1", verts.len(), 1)?;
                let xi2 = prog.declare("xi2", verts.len(), 1)?;
                let mut out = Vec::with_capacity(verts.len());
                for (l, v) in verts.iter().enumerate() {
                    prog.add_soc(g1.mul_vec(v), xi1.get(l))?;
                    prog.add_soc(g2.mul_vec(&rem.q(v)), xi2.get(l))?;
                    out.push((xi1.get(l) + xi2.get(l) + 1.0) * d.t as f64);
                }
                extra.extend([xi1, xi2]);
                out
            }
        }
    } else {
        vec![LinExpr::zero(); verts.len()]
    };

    prog.set_group("vertex_epigraph");
    for (l, v) in verts.iter().enumerate() {
        let q = rem.q(v);
        let vv = 0.5 * v.norm_squared();
        let slackness: Vec<f64> = (0..s).map(|j| g[j] - f.row(j).dot(&v.transpose())).collect();
        for i in 0..s {
            let mut lhs = dot(q.as_slice(), &w.row(i)) + eps.get(i) * vv - dot(&slackness, &pm.mat().row(i));
            lhs += &(dist[l].clone() * (hw * row_l1(f, i)));
            prog.add_le(lhs, t.get(i))?;
        }
    }
    prog.set_group("margin");
    for i in 0..s {
        prog.add_le(dual_row_times_g(&pm, &g, i) + t.get(i), LinExpr::constant(spec.lambda * g[i]))?;
    }

    prog.set_group("curvature");
    let mut exact = true;
    for i in 0..s {
        match spec.options.robust_curvature {
            CurvatureScope::Full => {
                let (pts, ex) = enforcement_points(p, None, rem, spec.options.grid_per_axis);
                exact &= ex;
                add_curvature(&mut prog, rem, &w.row(i), &identity(n), &pts, Some(&eps.get(i)))?;
            }
            CurvatureScope::FacetTangent => {
                let face = p.facet(i);
                let (pts, ex) = enforcement_points(p, Some(&face), rem, spec.options.grid_per_axis);
                exact &= ex;
                add_curvature(&mut prog, rem, &w.row(i), &face.tangent_basis, &pts, Some(&eps.get(i)))?;
            }
        }
    }
    let input = add_input_constraints_inner(&mut prog, spec, &param)?;
    if let Some((_, ex)) = &input {
        exact &= ex;
    }
    prog.set_objective(eps.sum())?;

    let mut sol = prog.solve(&spec.options.solver)?;
    let Some(rep) = param.extract(&mut sol, d)? else {
        return Ok(SynthesisResult::failed(Theorem::Robust, None, spec, &sol));
    };
    let mut handles: Vec<&VarHandle> = vec![&eps, &t];
    handles.extend(extra.iter());
    if let Some((h, _)) = &input {
        handles.push(&h.gamma);
        handles.push(&h.tau);
    }
    Ok(SynthesisResult {
        theorem: Theorem::Robust,
        mode: None,
        status: sol.status,
        lambda: spec.lambda,
        objective: sol.objective_value,
        polytope: p.clone(),
        gains: Some(Gains::Global { rep }),
        slacks: collect_slacks(&sol, &handles),
        duals: vec![Mat(sol.value(&pm))],
        infeasible_groups: Vec::new(),
        requires_verification: !exact || spec.options.disturbance_bound == DisturbanceBound::PaperVertex,
        programs_solved: 1,
        stats: vec![sol.stats],
    })
}
