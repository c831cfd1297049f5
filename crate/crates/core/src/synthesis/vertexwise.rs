use std::collections::BTreeMap;

use crate::conic::{dot, ExprMat, LinExpr, Program, Solution, SolveStatus, VarHandle};
use crate::io::Mat;
use crate::plant_data::ClosedLoopRep;

use super::curvature::{add_curvature, enforcement_points, identity};
use super::param::DataParam;
use super::thm1::{add_dual_matching, dual_row_times_g};
use super::{CertificateSpec, Gains, Mode, SynthesisError, SynthesisResult, Theorem};

pub(crate) struct InputHandles {
    pub gamma: VarHandle,
    pub tau: VarHandle,
}

/// Bound every row of `F_u u(x) <= g_u` on the whole set: `psi_j(v) + gamma_j |v|^2 / 2 <= tau_j` at
/// the vertices, `d2 psi_j + gamma_j I >= 0`, `tau_j <= (g_u)_j`. Does nothing without an input
/// polytope.
pub fn add_input_constraints(prog: &mut Program, spec: &CertificateSpec, param: &DataParam) -> Result<(), SynthesisError> {
    add_input_constraints_inner(prog, spec, param).map(|_| ())
}

pub(crate) fn add_input_constraints_inner(
    prog: &mut Program,
    spec: &CertificateSpec,
    param: &DataParam,
) -> Result<Option<(InputHandles, bool)>, SynthesisError> {
    let Some(input) = &spec.input else { return Ok(None) };
    let p = &spec.polytope;
    let rem = &spec.remainder;
    let rows = input.f_u.nrows();
    let (k1, k2) = param.gains(&spec.data);
    let fk1 = ExprMat::lmul(&input.f_u, &k1);
    let fk2 = ExprMat::lmul(&input.f_u, &k2);
    prog.set_group("input_sign");
    let gamma = prog.declare_nonneg("gamma", rows, 1)?;
    let tau = prog.declare("tau", rows, 1)?;
    prog.set_group("input_epigraph");
    for v in &p.vertices().vertices {
        let q = rem.q(v);
        let vv = 0.5 * v.norm_squared();
        for j in 0..rows {
            let psi = dot(v.as_slice(), &fk1.row(j)) + dot(q.as_slice(), &fk2.row(j));
            prog.add_le(psi + gamma.get(j) * vv, tau.get(j))?;
        }
    }
    prog.set_group("input_curvature");
    let (pts, exact) = enforcement_points(p, None, rem, spec.options.grid_per_axis);
    for j in 0..rows {
        add_curvature(prog, rem, &fk2.row(j), &identity(p.n()), &pts, Some(&gamma.get(j)))?;
    }
    prog.set_group("input_margin");
    for j in 0..rows {
        prog.add_le(tau.get(j), LinExpr::constant(input.g_u[j]))?;
    }
    Ok(Some((InputHandles { gamma, tau }, exact)))
}

struct Built {
    prog: Program,
    param: DataParam,
    pm: VarHandle,
    eps: VarHandle,
    t: VarHandle,
    input: Option<InputHandles>,
    exact: bool,
}

/// One face-restricted program. `active` is the active set of the vertex whose gains are being
/// designed; `None` builds the single program of the unstructured mode.
fn build(spec: &CertificateSpec, mode: Mode, active: Option<&[usize]>) -> Result<Built, SynthesisError> {
    let p = &spec.polytope;
    let d = &spec.data;
    let rem = &spec.remainder;
    let (f, s) = (p.f(), p.s());
    let g: Vec<f64> = p.g().iter().copied().collect();
    let verts = &p.vertices().vertices;

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

    let is_active = |i: usize| active.map(|a| a.contains(&i)).unwrap_or(false);
    let mut exact = true;
    for i in 0..s {
        let (pin, curve) = match mode {
            Mode::Unstructured => (false, true),
            Mode::Structured => (is_active(i), !is_active(i)),
            Mode::ActiveOnly => (!is_active(i), is_active(i)),
        };
        if pin {
            prog.set_group("structured_slack");
            prog.add_eq(eps.get(i))?;
        }
        if curve {
            prog.set_group("curvature");
            let face = p.facet(i);
            let (pts, ex) = enforcement_points(p, Some(&face), rem, spec.options.grid_per_axis);
            exact &= ex;
            add_curvature(&mut prog, rem, &w.row(i), &face.tangent_basis, &pts, Some(&eps.get(i)))?;
        }
    }

    prog.set_group("vertex_epigraph");
    for v in verts {
        let q = rem.q(v);
        let vv = 0.5 * v.norm_squared();
        let slackness: Vec<f64> = (0..s).map(|j| g[j] - f.row(j).dot(&v.transpose())).collect();
        for i in 0..s {
            let lhs = dot(q.as_slice(), &w.row(i)) + eps.get(i) * vv - dot(&slackness, &pm.mat().row(i));
            prog.add_le(lhs, t.get(i))?;
        }
    }
    prog.set_group("margin");
    for i in 0..s {
        prog.add_le(dual_row_times_g(&pm, &g, i) + t.get(i), LinExpr::constant(spec.lambda * g[i]))?;
    }

    let input = match add_input_constraints_inner(&mut prog, spec, &param)? {
        Some((h, ex)) => {
            exact &= ex;
            Some(h)
        }
        None => None,
    };
    prog.set_objective(eps.sum())?;
    Ok(Built { prog, param, pm, eps, t, input, exact })
}

struct Solved {
    sol: Solution,
    rep: Option<ClosedLoopRep>,
    built: Built,
}

fn solve_one(spec: &CertificateSpec, mode: Mode, active: Option<&[usize]>) -> Result<Solved, SynthesisError> {
    let built = build(spec, mode, active)?;
    let mut sol = built.prog.solve(&spec.options.solver)?;
    let rep = built.param.extract(&mut sol, &spec.data)?;
    Ok(Solved { sol, rep, built })
}

fn slacks_of(out: &mut BTreeMap<String, Mat>, s: &Solved, suffix: &str) {
    let mut put = |h: &VarHandle| {
        out.insert(format!("{}{suffix}", h.name), Mat(s.sol.value(h)));
    };
    put(&s.built.eps);
    put(&s.built.t);
    if let Some(inp) = &s.built.input {
        put(&inp.gamma);
        put(&inp.tau);
    }
}

/// Face-restricted certificates. The unstructured mode solves one program and returns global gains;
/// the other modes solve one program per class of vertices sharing an active set and return one
/// gain pair per vertex, to be interpolated over the minimal face of the state.
pub fn synth_vertexwise(spec: &CertificateSpec, mode: Mode) -> Result<SynthesisResult, SynthesisError> {
    spec.validate()?;
    spec.require_disturbance_free("the face-restricted certificate")?;
    let p = &spec.polytope;

    if mode == Mode::Unstructured {
        let solved = solve_one(spec, mode, None)?;
        if !solved.sol.is_optimal() {
            return Ok(SynthesisResult::failed(Theorem::Vertexwise, Some(mode), spec, &solved.sol));
        }
        let mut slacks = BTreeMap::new();
        slacks_of(&mut slacks, &solved, "");
        return Ok(SynthesisResult {
            theorem: Theorem::Vertexwise,
            mode: Some(mode),
            status: solved.sol.status,
            lambda: spec.lambda,
            objective: solved.sol.objective_value,
            polytope: p.clone(),
            gains: Some(Gains::Global { rep: solved.rep.expect("optimal") }),
            slacks,
            duals: vec![Mat(solved.sol.value(&solved.built.pm))],
            infeasible_groups: Vec::new(),
            requires_verification: !solved.built.exact,
            programs_solved: 1,
            stats: vec![solved.sol.stats],
        });
    }

    // vertices with identical active sets pose identical programs
    let incid = &p.vertices().incidences;
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut class_of = vec![0usize; incid.len()];
    for (l, a) in incid.iter().enumerate() {
        match classes.iter().position(|c| incid[c[0]] == *a) {
            Some(k) => {
                classes[k].push(l);
                class_of[l] = k;
            }
            None => {
                class_of[l] = classes.len();
                classes.push(vec![l]);
            }
        }
    }

    let run = |c: &Vec<usize>| solve_one(spec, mode, Some(&incid[c[0]]));
    let solved: Vec<Solved> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            classes.par_iter().map(run).collect::<Result<_, _>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            classes.iter().map(run).collect::<Result<_, _>>()?
        }
    };

    let stats: Vec<_> = solved.iter().map(|s| s.sol.stats.clone()).collect();
    if let Some(bad) = solved.iter().position(|s| !s.sol.is_optimal()) {
        let mut res = SynthesisResult::failed(Theorem::Vertexwise, Some(mode), spec, &solved[bad].sol);
        if solved.iter().any(|s| s.sol.status == SolveStatus::Infeasible) {
            res.status = SolveStatus::Infeasible;
        }
        res.infeasible_groups = solved
            .iter()
            .enumerate()
            .flat_map(|(k, s)| s.sol.infeasible_groups.iter().map(move |g| format!("class{k}:{g}")))
            .collect();
        res.programs_solved = solved.len();
        res.stats = stats;
        return Ok(res);
    }

    let mut slacks = BTreeMap::new();
    for (k, s) in solved.iter().enumerate() {
        slacks_of(&mut slacks, s, &format!("[{k}]"));
    }
    let reps: Vec<ClosedLoopRep> = class_of.iter().map(|&k| solved[k].rep.clone().expect("optimal")).collect();
    Ok(SynthesisResult {
        theorem: Theorem::Vertexwise,
        mode: Some(mode),
        status: SolveStatus::Optimal,
        lambda: spec.lambda,
        objective: solved.iter().map(|s| s.sol.objective_value).sum(),
        polytope: p.clone(),
        gains: Some(Gains::VertexFamily { reps, class: class_of }),
        slacks,
        duals: solved.iter().map(|s| Mat(s.sol.value(&s.built.pm))).collect(),
        infeasible_groups: Vec::new(),
        requires_verification: mode == Mode::ActiveOnly || solved.iter().any(|s| !s.built.exact),
        programs_solved: solved.len(),
        stats,
    })
}
