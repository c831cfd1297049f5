//! Halfspace polytopes `{x : F x <= g}` with vertex enumeration, faces and tangent bases.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::io::decimal;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_ENUM_LIMIT: usize = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolytopeError {
    #[error("polytope is empty")]
    EmptySet,
    #[error("polytope is unbounded")]
    Unbounded,
    #[error("row {0} of F is zero")]
    ZeroRow(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state dimension {n} exceeds enumeration limit {limit}")]
    DimensionTooLarge { n: usize, limit: usize },
    #[error("point lies outside the set (row {row}, excess {excess:e})")]
    OutsideSet { row: usize, excess: f64 },
    #[error("offset g[{0}] is not positive")]
    NonpositiveOffset(usize),
    #[error("scale r[{0}] is not positive")]
    NonpositiveScale(usize),
    #[error("tolerance must be nonnegative and finite")]
    BadTolerance,
}

/// Vertices in lexicographic order with the facets active at each one.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    pub vertices: Vec<DVector<f64>>,
    pub incidences: Vec<Vec<usize>>,
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub active_facets: Vec<usize>,
    pub vertex_indices: Vec<usize>,
    /// n × d_F, orthonormal columns spanning the nullspace of the active rows.
    pub tangent_basis: DMatrix<f64>,
}

impl Face {
    pub fn dim(&self) -> usize {
        self.tangent_basis.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetPartition {
    pub plus_set: Vec<usize>,
    pub zero_set: Vec<usize>,
    /// (representative, mirror) pairs with `F[mirror] = -F[representative]`.
    pub pair_map: Vec<(usize, usize)>,
}

impl FacetPartition {
    pub fn mirror_of(&self, i: usize) -> Option<usize> {
        self.pair_map.iter().find(|(a, _)| *a == i).map(|(_, b)| *b)
    }

    /// Representative of a mirror facet, if `j` is one.
    pub fn representative_of(&self, j: usize) -> Option<usize> {
        self.pair_map.iter().find(|(_, b)| *b == j).map(|(a, _)| *a)
    }

    pub fn is_mirror(&self, j: usize) -> bool {
        self.representative_of(j).is_some()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeSpec {
    #[serde(rename = "F", with = "decimal::matrix")]
    pub f: DMatrix<f64>,
    #[serde(with = "decimal::vector")]
    pub g: DVector<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "PolytopeSpec", into = "PolytopeSpec")]
pub struct Polytope {
    f: DMatrix<f64>,
    g: DVector<f64>,
    tol: f64,
    vertices: VertexSet,
    faces: Mutex<HashMap<Vec<usize>, Arc<Face>>>,
}

impl Clone for Polytope {
    fn clone(&self) -> Self {
        Polytope {
            f: self.f.clone(),
            g: self.g.clone(),
            tol: self.tol,
            vertices: self.vertices.clone(),
            faces: Mutex::new(HashMap::new()),
        }
    }
}

impl PartialEq for Polytope {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.g == other.g && self.tol == other.tol
    }
}

impl TryFrom<PolytopeSpec> for Polytope {
    type Error = PolytopeError;
    fn try_from(s: PolytopeSpec) -> Result<Self, Self::Error> {
        Polytope::from_halfspaces(s.f, s.g, s.tol)
    }
}

impl From<Polytope> for PolytopeSpec {
    fn from(p: Polytope) -> Self {
        PolytopeSpec { f: p.f, g: p.g, tol: p.tol }
    }
}

impl Polytope {
    pub fn from_halfspaces(f: DMatrix<f64>, g: DVector<f64>, tol: f64) -> Result<Self, PolytopeError> {
        Self::from_halfspaces_with_limit(f, g, tol, DEFAULT_ENUM_LIMIT)
    }

    pub fn from_halfspaces_with_limit(
        f: DMatrix<f64>,
        g: DVector<f64>,
        tol: f64,
        limit: usize,
    ) -> Result<Self, PolytopeError> {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(PolytopeError::BadTolerance);
        }
        if f.nrows() != g.len() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "F has {} rows but g has length {}",
                f.nrows(),
                g.len()
            )));
        }
        if f.ncols() == 0 {
            return Err(PolytopeError::DimensionMismatch("F has no columns".into()));
        }
        for i in 0..f.nrows() {
            if f.row(i).iter().all(|v| *v == 0.0) {
                return Err(PolytopeError::ZeroRow(i));
            }
        }
        let vertices = enumerate(&f, &g, tol, limit)?;
        Ok(Polytope { f, g, tol, vertices, faces: Mutex::new(HashMap::new()) })
    }

    /// Axis-aligned box `|x_i| <= r`.
    pub fn hypercube(n: usize, r: f64) -> Result<Self, PolytopeError> {
        let mut f = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            f[(i, i)] = 1.0;
            f[(n + i, i)] = -1.0;
        }
        Polytope::from_halfspaces(f, DVector::from_element(2 * n, r), DEFAULT_TOL)
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn n(&self) -> usize {
        self.f.ncols()
    }

    pub fn s(&self) -> usize {
        self.f.nrows()
    }

    pub fn vertices(&self) -> &VertexSet {
        &self.vertices
    }

    pub fn spec(&self) -> PolytopeSpec {
        self.clone().into()
    }

    /// Residual tolerance for row `i` at `x`, scaled by the row magnitude.
    fn row_tol(&self, i: usize, x: &DVector<f64>) -> f64 {
        row_tol(&self.f, &self.g, self.tol, i, x)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..self.s()).all(|i| self.f.row(i).dot(&x.transpose()) - self.g[i] <= self.row_tol(i, x))
    }

    pub fn active_set(&self, x: &DVector<f64>) -> Vec<usize> {
        (0..self.s())
            .filter(|&i| (self.f.row(i).dot(&x.transpose()) - self.g[i]).abs() <= self.row_tol(i, x))
            .collect()
    }

    pub fn minimal_face(&self, x: &DVector<f64>) -> Result<Arc<Face>, PolytopeError> {
        if x.len() != self.n() {
            return Err(PolytopeError::DimensionMismatch(format!("point has length {}", x.len())));
        }
        for i in 0..self.s() {
            let excess = self.f.row(i).dot(&x.transpose()) - self.g[i];
            if excess > self.row_tol(i, x) {
                return Err(PolytopeError::OutsideSet { row: i, excess });
            }
        }
        Ok(self.face_of(&self.active_set(x)))
    }

    /// Face for a given active set, cached by key.
    pub fn face_of(&self, active: &[usize]) -> Arc<Face> {
        let key = active.to_vec();
        if let Some(face) = self.faces.lock().expect("face cache poisoned").get(&key) {
            return face.clone();
        }
        let vertex_indices = self
            .vertices
            .incidences
            .iter()
            .enumerate()
            .filter(|(_, inc)| active.iter().all(|i| inc.contains(i)))
            .map(|(k, _)| k)
            .collect();
        let rows = DMatrix::from_fn(active.len(), self.n(), |r, c| self.f[(active[r], c)]);
        let face = Arc::new(Face {
            active_facets: key.clone(),
            vertex_indices,
            tangent_basis: tangent_basis(&rows, self.n()),
        });
        self.faces.lock().expect("face cache poisoned").entry(key).or_insert(face).clone()
    }

    /// The facet `{x in P : F_i x = g_i}` as a face.
    pub fn facet(&self, i: usize) -> Arc<Face> {
        self.face_of(&[i])
    }

    pub fn sign_symmetric_partition(&self) -> FacetPartition {
        let s = self.s();
        let mut used = vec![false; s];
        let mut plus_set = Vec::new();
        let mut zero_set = Vec::new();
        let mut pair_map = Vec::new();
        for i in 0..s {
            if used[i] {
                continue;
            }
            let scale = self.f.row(i).amax().max(1.0);
            let mirror = (i + 1..s).find(|&j| {
                !used[j]
                    && (0..self.n()).all(|c| (self.f[(i, c)] + self.f[(j, c)]).abs() <= self.tol * scale)
            });
            used[i] = true;
            match mirror {
                Some(j) => {
                    used[j] = true;
                    plus_set.push(i);
                    pair_map.push((i, j));
                }
                None => zero_set.push(i),
            }
        }
        FacetPartition { plus_set, zero_set, pair_map }
    }

    pub fn minkowski_gauge(&self, x: &DVector<f64>) -> Result<f64, PolytopeError> {
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.s() {
            if self.g[i] <= 0.0 {
                return Err(PolytopeError::NonpositiveOffset(i));
            }
            best = best.max(self.f.row(i).dot(&x.transpose()) / self.g[i]);
        }
        // Bounded sets with 0 interior have max_i F_i x >= 0 for every x.
        Ok(best.max(0.0))
    }

    pub fn scale_facets(&self, r: &DVector<f64>) -> Result<Polytope, PolytopeError> {
        if r.len() != self.s() {
            return Err(PolytopeError::DimensionMismatch(format!("scale vector has length {}", r.len())));
        }
        if let Some(i) = r.iter().position(|v| !(*v > 0.0)) {
            return Err(PolytopeError::NonpositiveScale(i));
        }
        Polytope::from_halfspaces(self.f.clone(), self.g.component_mul(r), self.tol)
    }

    pub fn scale_uniform(&self, r: f64) -> Result<Polytope, PolytopeError> {
        self.scale_facets(&DVector::from_element(self.s(), r))
    }

    /// `(M_x, R_0)`: both are the largest Euclidean vertex norm.
    pub fn max_vertex_norms(&self) -> (f64, f64) {
        let m = self.vertices.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        (m, m)
    }

    /// Largest `|x_j|` over the set, per coordinate.
    pub fn coordinate_bounds(&self) -> DVector<f64> {
        DVector::from_fn(self.n(), |j, _| {
            self.vertices.vertices.iter().map(|v| v[j].abs()).fold(0.0, f64::max)
        })
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        let mut lo = DVector::from_element(n, f64::INFINITY);
        let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
        for v in &self.vertices.vertices {
            for j in 0..n {
                lo[j] = lo[j].min(v[j]);
                hi[j] = hi[j].max(v[j]);
            }
        }
        (lo, hi)
    }

    pub fn vertices_csv(&self) -> String {
        let mut out = (0..self.n()).map(|j| format!("x{}", j + 1)).collect::<Vec<_>>().join(",");
        out.push('\n');
        for v in &self.vertices.vertices {
            out.push_str(&v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

fn row_tol(f: &DMatrix<f64>, g: &DVector<f64>, tol: f64, i: usize, x: &DVector<f64>) -> f64 {
    tol * (1.0 + g[i].abs() + f.row(i).abs().sum() * x.amax())
}

fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > smax * 1e-10).count()
}

fn enumerate(f: &DMatrix<f64>, g: &DVector<f64>, tol: f64, limit: usize) -> Result<VertexSet, PolytopeError> {
    let (s, n) = f.shape();
    if n > limit {
        return Err(PolytopeError::DimensionTooLarge { n, limit });
    }
    if rank(f) < n {
        return Err(PolytopeError::Unbounded);
    }
    let mut verts: Vec<DVector<f64>> = Vec::new();
    for combo in combinations(s, n) {
        let a = DMatrix::from_fn(n, n, |r, c| f[(combo[r], c)]);
        if rank(&a) < n {
            continue;
        }
        let b = DVector::from_fn(n, |r, _| g[combo[r]]);
        let Some(x) = a.lu().solve(&b) else { continue };
        let feasible = (0..s).all(|i| f.row(i).dot(&x.transpose()) - g[i] <= row_tol(f, g, tol, i, &x));
        if !feasible {
            continue;
        }
        let dup_tol = tol.max(1e-12) * (1.0 + x.amax());
        if !verts.iter().any(|v| (v - &x).amax() <= dup_tol) {
            verts.push(x);
        }
    }
    if verts.is_empty() {
        return Err(PolytopeError::EmptySet);
    }
    // Extreme rays of the recession cone {d : F d <= 0} sit on n-1 independent active rows.
    for combo in combinations(s, n - 1) {
        let a = DMatrix::from_fn(n - 1, n, |r, c| f[(combo[r], c)]);
        if n > 1 && rank(&a) < n - 1 {
            continue;
        }
        let d = null_vector(&a, n);
        for sign in [1.0, -1.0] {
            let dd = &d * sign;
            if (0..s).all(|i| f.row(i).dot(&dd.transpose()) <= 1e-10 * f.row(i).norm()) {
                return Err(PolytopeError::Unbounded);
            }
        }
    }
    for v in verts.iter_mut() {
        for c in v.iter_mut() {
            if c.abs() < 1e-15 {
                *c = 0.0;
            }
        }
    }
    verts.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let incidences = verts
        .iter()
        .map(|x| {
            (0..s)
                .filter(|&i| (f.row(i).dot(&x.transpose()) - g[i]).abs() <= row_tol(f, g, tol, i, x))
                .collect()
        })
        .collect();
    Ok(VertexSet { vertices: verts, incidences })
}

/// Unit vector orthogonal to the rows of `a` (a has rank n-1).
fn null_vector(a: &DMatrix<f64>, n: usize) -> DVector<f64> {
    let basis = tangent_basis(a, n);
    basis.column(0).into_owned()
}

/// Orthonormal basis of the nullspace of `rows`, built by Gram-Schmidt on projected unit vectors
/// so that coordinate-aligned faces get exact coordinate axes.
pub fn tangent_basis(rows: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut row_basis: Vec<DVector<f64>> = Vec::new();
    for r in 0..rows.nrows() {
        let mut v: DVector<f64> = rows.row(r).transpose();
        for b in &row_basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let nv = v.norm();
        if nv > 1e-10 * rows.row(r).norm().max(1e-300) {
            row_basis.push(v / nv);
        }
    }
    let d = n - row_basis.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(d);
    for j in 0..n {
        if cols.len() == d {
            break;
        }
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        for b in row_basis.iter().chain(cols.iter()) {
            let c = b.dot(&v);
            v -= b * c;
        }
        let nv = v.norm();
        if nv > 1e-8 {
            let mut u = v / nv;
            for c in u.iter_mut() {
                if c.abs() < 1e-14 {
                    *c = 0.0;
                }
            }
            let nu = u.norm();
            cols.push(u / nu);
        }
    }
    DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r])
}

/// All k-subsets of 0..s in lexicographic order.
pub fn combinations(s: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > s {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + s - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interval() -> Polytope {
        Polytope::from_halfspaces(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![0.0, 1.0]), DEFAULT_TOL)
            .unwrap()
    }

    fn simplex2() -> Polytope {
        Polytope::from_halfspaces(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
            DEFAULT_TOL,
        )
        .unwrap()
    }

    #[test]
    fn interval_vertices() {
        let p = interval();
        let v: Vec<f64> = p.vertices().vertices.iter().map(|v| v[0]).collect();
        assert_eq!(v, vec![-1.0, 0.0]);
    }

    #[test]
    fn box_has_eight_vertices() {
        let p = Polytope::hypercube(3, 0.5).unwrap();
        assert_eq!(p.vertices().len(), 8);
        for v in &p.vertices().vertices {
            assert!(v.iter().all(|c| (c.abs() - 0.5).abs() < 1e-15));
        }
        assert_eq!(p.vertices().vertices[0], DVector::from_element(3, -0.5));
    }

    #[test]
    fn missing_bound_is_unbounded() {
        let r = Polytope::from_halfspaces(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0]),
            DVector::from_element(3, 1.0),
            DEFAULT_TOL,
        );
        assert_eq!(r.unwrap_err(), PolytopeError::Unbounded);
    }

    #[test]
    fn empty_and_zero_row() {
        let r = Polytope::from_halfspaces(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
            DEFAULT_TOL,
        );
        assert_eq!(r.unwrap_err(), PolytopeError::EmptySet);
        let r = Polytope::from_halfspaces(
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            DEFAULT_TOL,
        );
        assert_eq!(r.unwrap_err(), PolytopeError::ZeroRow(1));
    }

    #[test]
    fn simplex_matches_brute_force() {
        let p = simplex2();
        // brute force over all facet pairs
        let f = p.f().clone();
        let g = p.g().clone();
        let mut brute = Vec::new();
        for i in 0..3 {
            for j in i + 1..3 {
                let a = DMatrix::from_fn(2, 2, |r, c| f[([i, j][r], c)]);
                let b = DVector::from_vec(vec![g[i], g[j]]);
                let x = a.try_inverse().unwrap() * b;
                if (0..3).all(|k| f.row(k).dot(&x.transpose()) <= g[k] + 1e-12) {
                    brute.push((x[0], x[1]));
                }
            }
        }
        brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got: Vec<(f64, f64)> = p.vertices().vertices.iter().map(|v| (v[0], v[1])).collect();
        assert_eq!(got, brute);
        assert_eq!(got, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)]);
    }

    #[test]
    fn enumeration_limit() {
        let f = DMatrix::<f64>::identity(7, 7);
        let r = Polytope::from_halfspaces(f, DVector::from_element(7, 1.0), DEFAULT_TOL);
        assert_eq!(r.unwrap_err(), PolytopeError::DimensionTooLarge { n: 7, limit: 6 });
    }

    #[test]
    fn minimal_faces_of_box() {
        let r = 0.5;
        let p = Polytope::hypercube(3, r).unwrap();
        let f = p.minimal_face(&DVector::from_element(3, r)).unwrap();
        assert_eq!(f.active_facets, vec![0, 1, 2]);
        assert_eq!(f.dim(), 0);
        assert_eq!(f.vertex_indices.len(), 1);
        let e = p.minimal_face(&DVector::from_vec(vec![r, r, 0.0])).unwrap();
        assert_eq!(e.active_facets, vec![0, 1]);
        assert_eq!(e.dim(), 1);
        assert_eq!(e.tangent_basis.column(0).abs(), DVector::from_vec(vec![0.0, 0.0, 1.0]));
        assert_eq!(e.vertex_indices.len(), 2);
        let c = p.minimal_face(&DVector::zeros(3)).unwrap();
        assert!(c.active_facets.is_empty());
        assert_eq!(c.dim(), 3);
        assert_eq!(c.vertex_indices.len(), 8);
        assert!(matches!(
            p.minimal_face(&DVector::from_vec(vec![0.6, 0.0, 0.0])),
            Err(PolytopeError::OutsideSet { row: 0, .. })
        ));
    }

    #[test]
    fn partitions() {
        let b = Polytope::hypercube(3, 1.0).unwrap().sign_symmetric_partition();
        assert_eq!(b.plus_set, vec![0, 1, 2]);
        assert!(b.zero_set.is_empty());
        assert_eq!(b.pair_map, vec![(0, 3), (1, 4), (2, 5)]);
        let s = simplex2().sign_symmetric_partition();
        assert!(s.plus_set.is_empty());
        assert_eq!(s.zero_set, vec![0, 1, 2]);
        let i = interval().sign_symmetric_partition();
        assert_eq!(i.plus_set, vec![0]);
        assert_eq!(i.mirror_of(0), Some(1));
    }

    #[test]
    fn gauge_values() {
        let p = Polytope::hypercube(3, 0.5).unwrap();
        assert_eq!(p.minkowski_gauge(&DVector::zeros(3)).unwrap(), 0.0);
        assert!((p.minkowski_gauge(&DVector::from_vec(vec![0.25, 0.0, 0.0])).unwrap() - 0.5).abs() < 1e-15);
        assert!((p.minkowski_gauge(&DVector::from_vec(vec![0.5, -0.1, 0.2])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(interval().minkowski_gauge(&DVector::zeros(1)), Err(PolytopeError::NonpositiveOffset(0)));
    }

    #[test]
    fn scaling() {
        let p = Polytope::hypercube(3, 0.5).unwrap();
        let q = p.scale_uniform(2.0).unwrap();
        assert!(q.vertices().vertices.iter().all(|v| v.iter().all(|c| (c.abs() - 1.0).abs() < 1e-15)));
        let i = interval().scale_facets(&DVector::from_vec(vec![0.5, 1.0])).unwrap();
        let v: Vec<f64> = i.vertices().vertices.iter().map(|v| v[0]).collect();
        assert_eq!(v, vec![-1.0, 0.0]);
        assert_eq!(p.scale_uniform(0.0).unwrap_err(), PolytopeError::NonpositiveScale(0));
    }

    #[test]
    fn vertex_norms() {
        let (mx, r0) = Polytope::hypercube(3, 0.5).unwrap().max_vertex_norms();
        assert!((mx - 0.5 * 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(mx, r0);
        assert_eq!(interval().max_vertex_norms().0, 1.0);
        // brute force over the three simplex vertices
        let brute = [(0.0f64, 0.0f64), (1.0, 0.0), (0.0, 1.0)].iter().map(|(a, b)| (a * a + b * b).sqrt()).fold(0.0, f64::max);
        assert_eq!(simplex2().max_vertex_norms().0, brute);
    }

    #[test]
    fn json_round_trip() {
        let p = simplex2();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"F\""));
        let q: Polytope = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.vertices(), p.vertices());
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(6, 3).len(), 20);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(4, 2)[5], vec![2, 3]);
    }

    fn random_polytope() -> impl Strategy<Value = Polytope> {
        // a box intersected with a few random cuts that keep the origin inside
        (2usize..=3, proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.2f64..1.0), 0..4)).prop_map(
            |(n, cuts)| {
                let mut rows: Vec<Vec<f64>> = Vec::new();
                let mut g = Vec::new();
                for i in 0..n {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    rows.push(e.clone());
                    e[i] = -1.0;
                    rows.push(e);
                    g.push(1.0);
                    g.push(1.0);
                }
                for (a, b, c, off) in cuts {
                    let row: Vec<f64> = [a, b, c][..n].to_vec();
                    if row.iter().map(|v| v.abs()).sum::<f64>() > 0.1 {
                        rows.push(row);
                        g.push(off);
                    }
                }
                let f = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
                Polytope::from_halfspaces(f, DVector::from_vec(g), DEFAULT_TOL).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn vertices_are_feasible_and_incident(p in random_polytope()) {
            for (v, inc) in p.vertices().vertices.iter().zip(&p.vertices().incidences) {
                prop_assert!(p.contains(v));
                prop_assert!(inc.len() >= p.n());
            }
        }

        #[test]
        fn face_tangents_are_orthonormal(p in random_polytope(), k in 0usize..16) {
            let verts = &p.vertices().vertices;
            let a = &verts[k % verts.len()];
            let b = &verts[(k * 7 + 3) % verts.len()];
            let x = (a + b) * 0.5;
            let face = p.minimal_face(&x).unwrap();
            let t = &face.tangent_basis;
            let gram = t.transpose() * t;
            prop_assert!((gram - DMatrix::identity(t.ncols(), t.ncols())).amax() < 1e-10);
            let rows = DMatrix::from_fn(face.active_facets.len(), p.n(), |r, c| p.f()[(face.active_facets[r], c)]);
            if rows.nrows() > 0 && t.ncols() > 0 {
                prop_assert!((&rows * t).amax() < 1e-9);
            }
            prop_assert_eq!(t.ncols(), p.n() - rank(&rows));
        }

        #[test]
        fn gauge_is_positively_homogeneous(p in random_polytope(), x in proptest::collection::vec(-2.0f64..2.0, 3), a in 0.0f64..5.0) {
            let x = DVector::from_vec(x[..p.n()].to_vec());
            let v1 = p.minkowski_gauge(&(&x * a)).unwrap();
            let v0 = p.minkowski_gauge(&x).unwrap();
            prop_assert!((v1 - a * v0).abs() <= 1e-12 * (1.0 + v1.abs()));
            if v0 < 1.0 - 1e-9 {
                prop_assert!(p.contains(&x));
            }
            if v0 > 1.0 + 1e-6 {
                prop_assert!(!p.contains(&x));
            }
        }

        #[test]
        fn unit_scaling_keeps_vertices(p in random_polytope()) {
            let q = p.scale_uniform(1.0).unwrap();
            prop_assert_eq!(q.vertices().len(), p.vertices().len());
            for (a, b) in q.vertices().vertices.iter().zip(&p.vertices().vertices) {
                prop_assert!((a - b).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn mirrored_facets_give_max_min_symmetry() {
        // any map M: max_x F_j M(x) = -min_x F_i M(x) for mirrored pairs
        let p = Polytope::hypercube(2, 1.0).unwrap();
        let part = p.sign_symmetric_partition();
        let m = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0] - 0.3 * x[1], x[0].sin() + x[1].powi(3)]);
        for &(i, j) in &part.pair_map {
            let mut mx = f64::NEG_INFINITY;
            let mut mn = f64::INFINITY;
            for a in 0..=40 {
                for b in 0..=40 {
                    let x = DVector::from_vec(vec![-1.0 + a as f64 / 20.0, -1.0 + b as f64 / 20.0]);
                    let y = m(&x);
                    mx = mx.max(p.f().row(j).dot(&y.transpose()));
                    mn = mn.min(p.f().row(i).dot(&y.transpose()));
                }
            }
            assert!((mx + mn).abs() < 1e-12);
        }
    }
}
