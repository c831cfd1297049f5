use nalgebra::{DMatrix, DVector};

use crate::basis::Remainder;
use crate::conic::{ExprMat, LinExpr, Program};
use crate::polytope::{Face, Polytope};

use super::SynthesisError;

/// Points where a Hessian condition is imposed, and whether imposing it there is exact.
///
/// With affine Hessians, positive semidefiniteness at the vertices of a face extends to the whole
/// face. Otherwise extra points are added and the result is only trusted after verification.
pub(crate) fn enforcement_points(p: &Polytope, face: Option<&Face>, rem: &Remainder, grid: usize) -> (Vec<DVector<f64>>, bool) {
    let verts = &p.vertices().vertices;
    let idx: Vec<usize> = match face {
        Some(f) => f.vertex_indices.clone(),
        None => (0..verts.len()).collect(),
    };
    let mut pts: Vec<DVector<f64>> = idx.iter().map(|&l| verts[l].clone()).collect();
    if rem.hessians_affine() {
        return (pts, true);
    }
    match face {
        None => {
            pts = crate::basis::grid_points(p, grid);
        }
        Some(_) => {
            let k = idx.len();
            let bary = idx.iter().fold(DVector::zeros(p.n()), |acc, &l| acc + &verts[l]) / k as f64;
            for a in 0..k {
                for b in a + 1..k {
                    pts.push((&verts[idx[a]] + &verts[idx[b]]) * 0.5);
                }
                pts.push((&verts[idx[a]] + &bary) * 0.5);
            }
            pts.push(bary);
        }
    }
    (pts, false)
}

/// Impose `T' (sum_k w_k d2Q_k(x)) T + slack I >= 0` at each point.
pub(crate) fn add_curvature(
    prog: &mut Program,
    rem: &Remainder,
    w: &[LinExpr],
    basis: &DMatrix<f64>,
    points: &[DVector<f64>],
    slack: Option<&LinExpr>,
) -> Result<(), SynthesisError> {
    let d = basis.ncols();
    if d == 0 || w.is_empty() {
        return Ok(());
    }
    for x in points {
        let proj: Vec<DMatrix<f64>> = rem.term_hessians(x).iter().map(|h| basis.transpose() * h * basis).collect();
        if proj.iter().all(|h| h.iter().all(|v| *v == 0.0)) {
            continue;
        }
        let m = ExprMat::from_fn(d, d, |a, b| {
            let mut e = LinExpr::zero();
            for (k, h) in proj.iter().enumerate() {
                if h[(a, b)] != 0.0 {
                    e.add_scaled(&w[k], h[(a, b)]);
                }
            }
            if a == b {
                if let Some(s) = slack {
                    e += s;
                }
            }
            e
        });
        prog.add_psd(m)?;
    }
    Ok(())
}

pub(crate) fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}
