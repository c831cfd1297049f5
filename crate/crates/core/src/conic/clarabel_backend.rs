use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{ConeKind, ConicError, Program, Solution, SolveStatus, SolverConfig, SolverStats};

/// Triplets to CSC with duplicates summed.
fn csc(m: usize, n: usize, mut trip: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    trip.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(trip.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(trip.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in trip {
        if last == Some((r, c)) {
            *nzval.last_mut().expect("nonempty") += v;
            continue;
        }
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
        last = Some((r, c));
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

pub(super) fn solve(p: &Program, cfg: &SolverConfig) -> Result<Solution, ConicError> {
    let form = p.standard_form(cfg!(feature = "sdp"))?;
    let n = form.n;
    if n == 0 {
        let viol = p.max_violation(&[]);
        let status = if viol <= cfg.audit_tol { SolveStatus::Optimal } else { SolveStatus::Infeasible };
        return Ok(p.finish(Vec::new(), status, SolverStats { max_violation: viol, ..Default::default() }, Vec::new()));
    }

    let cones: Vec<SupportedConeT<f64>> = form
        .cones
        .iter()
        .map(|c| match c.kind {
            ConeKind::Zero => Ok(SupportedConeT::ZeroConeT(c.dim)),
            ConeKind::Nonneg => Ok(SupportedConeT::NonnegativeConeT(c.dim)),
            ConeKind::Soc => Ok(SupportedConeT::SecondOrderConeT(c.dim)),
            #[cfg(feature = "sdp")]
            ConeKind::PsdTriangle => Ok(SupportedConeT::PSDTriangleConeT(c.dim)),
            #[cfg(not(feature = "sdp"))]
            ConeKind::PsdTriangle => Err(ConicError::UnsupportedCone("PSD".into())),
        })
        .collect::<Result<_, _>>()?;

    let pmat = CscMatrix::zeros((n, n));
    let amat = csc(form.m, n, form.a_triplets.clone());
    let settings = DefaultSettings {
        max_iter: cfg.max_iter,
        time_limit: cfg.time_limit,
        verbose: cfg.verbose,
        tol_feas: cfg.tol_feas,
        tol_gap_abs: cfg.tol_gap_abs,
        tol_gap_rel: cfg.tol_gap_rel,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&pmat, &form.q, &amat, &form.b, &cones, settings)
        .map_err(|e| ConicError::Setup(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let mut stats = SolverStats {
        iterations: sol.iterations,
        primal_residual: sol.r_prim,
        dual_residual: sol.r_dual,
        solve_time: sol.solve_time,
        max_violation: f64::NAN,
        raw_status: format!("{:?}", sol.status),
    };
    let x = sol.x.clone();
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let viol = p.max_violation(&x);
            stats.max_violation = viol;
            let status = if viol <= cfg.audit_tol { SolveStatus::Optimal } else { SolveStatus::NumericalFailure };
            Ok(p.finish(x, status, stats, Vec::new()))
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            let mut weight = vec![0.0; p.groups().len()];
            for (r, z) in sol.z.iter().enumerate() {
                weight[form.row_groups[r]] += z.abs();
            }
            let top = weight.iter().cloned().fold(0.0, f64::max);
            let groups = p
                .groups()
                .iter()
                .zip(&weight)
                .filter(|(_, w)| **w > 1e-6 * top.max(1e-300))
                .map(|(g, _)| g.clone())
                .collect();
            Ok(p.finish(x, SolveStatus::Infeasible, stats, groups))
        }
        _ => Ok(p.finish(x, SolveStatus::NumericalFailure, stats, Vec::new())),
    }
}
