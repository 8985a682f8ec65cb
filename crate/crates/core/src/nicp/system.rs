//! Stiffness-regularized linear system for per-vertex affine transforms.
//!
//! Each vertex `i` carries a 4×3 affine block `X_i`; its deformed position is
//! the row vector `[v_i, 1] · X_i`. The unknown `x` stacks the blocks into a
//! 4V×3 matrix. The three output columns share one normal matrix
//!
//! ```text
//! N = α² (Sᵀ E² S ⊗ G²) + Dᵀ diag(w)² D + λ I
//! ```
//!
//! where `S` is the node-arc incidence matrix, `E` the per-edge weights, `G`
//! the diagonal affine weight matrix and `D` the vertex data matrix. Each
//! solve is Tikhonov-damped toward the current estimate:
//! `N x = Dᵀ diag(w)² P + λ x_prev`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, Matrix4x3, Point3, RowVector4};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use super::Correspondences;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Assembled registration system for one source mesh.
#[derive(Debug, Clone)]
pub struct NicpState {
    source: TriMesh,
    edges: Vec<(usize, usize)>,
    edge_weights: Vec<f64>,
    affine_weights: [f64; 4],
    x: Vec<Matrix4x3<f64>>,
    layout: BlockLayout,
}

/// Build the system for `source` with unit edge weights, identity affine
/// weights and identity transforms.
pub fn build_system(source: &TriMesh) -> Result<NicpState> {
    let edges = source.edges();
    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    let components = source.connected_components();
    if components > 1 {
        log::warn!("source mesh has {components} connected components; each is regularized independently");
    }
    let layout = BlockLayout::new(source.vertex_count(), &edges);
    Ok(NicpState {
        source: source.clone(),
        edge_weights: vec![1.0; edges.len()],
        edges,
        affine_weights: [1.0; 4],
        x: vec![identity_block(); source.vertex_count()],
        layout,
    })
}

fn identity_block() -> Matrix4x3<f64> {
    let mut m = Matrix4x3::zeros();
    m[(0, 0)] = 1.0;
    m[(1, 1)] = 1.0;
    m[(2, 2)] = 1.0;
    m
}

#[inline]
fn data_row(v: &Point3<f64>) -> RowVector4<f64> {
    RowVector4::new(v.x, v.y, v.z, 1.0)
}

impl NicpState {
    pub fn vertex_count(&self) -> usize {
        self.source.vertex_count()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn affine_blocks(&self) -> &[Matrix4x3<f64>] {
        &self.x
    }

    pub fn set_affine_weights(&mut self, w: [f64; 4]) {
        self.affine_weights = w;
    }

    /// Per-edge stiffness weights (default 1).
    pub fn set_edge_weights(&mut self, w: Vec<f64>) -> Result<()> {
        if w.len() != self.edges.len() || w.iter().any(|&e| !(e >= 0.0)) {
            return Err(Error::InvalidConfig("edge weights must be non-negative, one per edge".into()));
        }
        self.edge_weights = w;
        Ok(())
    }

    /// Node-arc incidence matrix `S` (E × V): row `e = (i, j)` holds −1 at `i`, +1 at `j`.
    pub fn incidence(&self) -> CscMatrix<f64> {
        let mut coo = CooMatrix::new(self.edges.len(), self.vertex_count());
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            coo.push(e, i, -1.0);
            coo.push(e, j, 1.0);
        }
        CscMatrix::from(&coo)
    }

    /// Vertex data matrix `D` (V × 4V): row `i` holds `[x_i, y_i, z_i, 1]` in block `i`.
    pub fn data_matrix(&self) -> CscMatrix<f64> {
        let n = self.vertex_count();
        let mut coo = CooMatrix::new(n, 4 * n);
        for (i, v) in self.source.vertices().iter().enumerate() {
            for (k, c) in [v.x, v.y, v.z, 1.0].into_iter().enumerate() {
                coo.push(i, 4 * i + k, c);
            }
        }
        CscMatrix::from(&coo)
    }

    /// `x` as a dense 4V×3 matrix.
    pub fn x_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(4 * self.vertex_count(), 3);
        for (i, b) in self.x.iter().enumerate() {
            m.view_mut((4 * i, 0), (4, 3)).copy_from(b);
        }
        m
    }

    /// `V = D x`.
    pub fn deformed_vertices(&self) -> Vec<Point3<f64>> {
        self.source
            .vertices()
            .iter()
            .zip(&self.x)
            .map(|(v, b)| {
                let r = data_row(v) * b;
                Point3::new(r[0], r[1], r[2])
            })
            .collect()
    }

    pub fn deformed_mesh(&self) -> TriMesh {
        self.source
            .with_vertices(self.deformed_vertices())
            .expect("vertex count is fixed")
    }

    /// `Σ w_i² ‖[v_i,1] X_i − p_i‖²`.
    pub fn data_residual(&self, corr: &Correspondences) -> f64 {
        self.deformed_vertices()
            .iter()
            .zip(&corr.points)
            .zip(&corr.weights)
            .map(|((v, p), w)| w * w * (v - p).norm_squared())
            .sum()
    }

    /// `Σ_e e_w² ‖G (X_j − X_i)‖²`.
    pub fn stiffness_residual(&self) -> f64 {
        self.edges
            .iter()
            .zip(&self.edge_weights)
            .map(|(&(i, j), ew)| {
                let d = self.x[j] - self.x[i];
                let mut s = 0.0;
                for r in 0..4 {
                    s += (self.affine_weights[r] * d.row(r)).norm_squared();
                }
                ew * ew * s
            })
            .sum()
    }

    /// One stiffness-regularized solve with fixed correspondences.
    pub fn solve_stage(&mut self, corr: &Correspondences, alpha: f64, lambda: f64) -> Result<()> {
        if corr.weights.iter().all(|&w| w <= 0.0) {
            return Err(Error::NoValidCorrespondences);
        }
        self.solve_unchecked(corr, alpha, lambda)
    }

    pub(crate) fn solve_unchecked(&mut self, corr: &Correspondences, alpha: f64, lambda: f64) -> Result<()> {
        let n = self.vertex_count();
        assert_eq!(corr.points.len(), n, "one correspondence per vertex");
        let g2: [f64; 4] = self.affine_weights.map(|g| g * g);
        let a2 = alpha * alpha;
        let lay = &self.layout;
        let mut values = vec![0.0; lay.nnz];

        // stiffness: α² (Sᵀ E² S) ⊗ G²
        for (&(i, j), ew) in self.edges.iter().zip(&self.edge_weights) {
            let s = a2 * ew * ew;
            for k in 0..4 {
                let c = s * g2[k];
                values[lay.offset(i, i, k, k)] += c;
                values[lay.offset(j, j, k, k)] += c;
                values[lay.offset(i, j, k, k)] -= c;
                values[lay.offset(j, i, k, k)] -= c;
            }
        }
        // data: w_i² d_i d_iᵀ, and Tikhonov damping
        let mut rhs = DMatrix::zeros(4 * n, 3);
        for (i, v) in self.source.vertices().iter().enumerate() {
            let d = [v.x, v.y, v.z, 1.0];
            let w2 = corr.weights[i] * corr.weights[i];
            let p = corr.points[i];
            let pi = self.layout.perm[i];
            for r in 0..4 {
                for c in 0..4 {
                    values[lay.offset(i, i, r, c)] += w2 * d[r] * d[c];
                }
                values[lay.offset(i, i, r, r)] += lambda;
                for col in 0..3 {
                    rhs[(4 * pi + r, col)] = w2 * d[r] * p[col] + lambda * self.x[i][(r, col)];
                }
            }
        }
        let matrix = CscMatrix::try_from_csc_data(
            4 * n,
            4 * n,
            lay.col_offsets.clone(),
            lay.row_indices.clone(),
            values,
        )
        .expect("block layout is a valid CSC pattern");
        let chol = CscCholesky::factor(&matrix).map_err(|_| Error::SingularSystem {
            condition: diagonal_condition(&matrix),
        })?;
        let mut sol = chol.solve(&rhs);
        // stiff schedules make the system badly scaled; refinement with the
        // same factor recovers most of the lost digits
        for _ in 0..REFINEMENT_STEPS {
            let resid = &rhs - &matrix * &sol;
            sol += chol.solve(&resid);
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem {
                condition: diagonal_condition(&matrix),
            });
        }
        for (i, b) in self.x.iter_mut().enumerate() {
            let pi = self.layout.perm[i];
            b.copy_from(&sol.view((4 * pi, 0), (4, 3)));
        }
        Ok(())
    }
}

const REFINEMENT_STEPS: usize = 2;

/// max/min diagonal ratio; a cheap lower bound on the condition number.
fn diagonal_condition(m: &CscMatrix<f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (i, j, v) in m.triplet_iter() {
        if i == j {
            lo = lo.min(v.abs());
            hi = hi.max(v.abs());
        }
    }
    if lo > 0.0 { hi / lo } else { f64::INFINITY }
}

/// CSC layout of the 4×4-block normal matrix under a reverse Cuthill–McKee
/// vertex ordering.
#[derive(Debug, Clone)]
struct BlockLayout {
    /// vertex -> permuted block index
    perm: Vec<usize>,
    col_offsets: Vec<usize>,
    row_indices: Vec<usize>,
    /// per permuted block column: sorted permuted neighbor blocks (incl. self)
    block_rows: Vec<Vec<usize>>,
    /// per permuted block column: value offset of its first scalar column
    block_col_start: Vec<usize>,
    nnz: usize,
}

impl BlockLayout {
    fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let perm = rcm_permutation(&adj);
        let mut block_rows = vec![Vec::new(); n];
        for v in 0..n {
            let pv = perm[v];
            let mut rows: Vec<usize> = adj[v].iter().map(|&u| perm[u]).collect();
            rows.push(pv);
            rows.sort_unstable();
            rows.dedup();
            block_rows[pv] = rows;
        }
        let mut col_offsets = Vec::with_capacity(4 * n + 1);
        let mut row_indices = Vec::new();
        let mut block_col_start = Vec::with_capacity(n);
        col_offsets.push(0);
        for rows in &block_rows {
            block_col_start.push(row_indices.len());
            for _k in 0..4 {
                for &rb in rows {
                    for r in 0..4 {
                        row_indices.push(4 * rb + r);
                    }
                }
                col_offsets.push(row_indices.len());
            }
        }
        let nnz = row_indices.len();
        Self {
            perm,
            col_offsets,
            row_indices,
            block_rows,
            block_col_start,
            nnz,
        }
    }

    /// Value offset of scalar entry (row block of vertex `i`, component `r`;
    /// column block of vertex `j`, component `c`).
    #[inline]
    fn offset(&self, i: usize, j: usize, r: usize, c: usize) -> usize {
        let (pi, pj) = (self.perm[i], self.perm[j]);
        let rows = &self.block_rows[pj];
        let pos = rows.binary_search(&pi).expect("entry is in the pattern");
        self.block_col_start[pj] + c * 4 * rows.len() + 4 * pos + r
    }
}

/// Reverse Cuthill–McKee ordering; returns `perm[vertex] = new index`.
fn rcm_permutation(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let degree = |v: usize| adj[v].len();
    loop {
        let start = (0..n).filter(|&v| !seen[v]).min_by_key(|&v| (degree(v), v));
        let Some(start) = start else { break };
        let start = peripheral(adj, start);
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            nbrs.sort_unstable_by_key(|&u| (degree(u), u));
            nbrs.dedup();
            for u in nbrs {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    order.reverse();
    let mut perm = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    perm
}

/// Pseudo-peripheral vertex in `start`'s component (repeated BFS to the
/// farthest lowest-degree vertex).
fn peripheral(adj: &[Vec<usize>], start: usize) -> usize {
    let mut current = start;
    let mut best_ecc = 0;
    for _ in 0..8 {
        let mut dist = vec![usize::MAX; adj.len()];
        dist[current] = 0;
        let mut queue = VecDeque::from([current]);
        let mut last = current;
        while let Some(v) = queue.pop_front() {
            last = v;
            for &u in &adj[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        let ecc = dist[last];
        if ecc <= best_ecc {
            break;
        }
        best_ecc = ecc;
        let far = (0..adj.len())
            .filter(|&v| dist[v] == ecc)
            .min_by_key(|&v| (adj[v].len(), v))
            .unwrap_or(last);
        current = far;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use nalgebra::Vector3;

    fn corr_to(points: Vec<Point3<f64>>, w: f64) -> Correspondences {
        let n = points.len();
        Correspondences {
            points,
            normals: vec![Vector3::z(); n],
            weights: vec![w; n],
        }
    }

    #[test]
    fn two_vertex_incidence() {
        let m = TriMesh::new(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)], vec![[0, 1, 1]]).unwrap();
        let s = build_system(&m).unwrap().incidence();
        let dense = DMatrix::from(&s);
        assert_eq!(dense.shape(), (1, 2));
        assert_eq!(dense[(0, 0)], -1.0);
        assert_eq!(dense[(0, 1)], 1.0);
    }

    #[test]
    fn incidence_rows_sum_to_zero() {
        let st = build_system(&primitives::icosphere(2, 1.0)).unwrap();
        let dense = DMatrix::from(&st.incidence());
        for r in 0..dense.nrows() {
            assert_eq!(dense.row(r).sum(), 0.0);
        }
    }

    #[test]
    fn tetrahedron_has_six_block_rows() {
        let m = primitives::tetrahedron();
        // oracle: unique undirected edges enumerated from faces
        let mut uniq = std::collections::BTreeSet::new();
        for f in m.faces() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                uniq.insert((a.min(b), a.max(b)));
            }
        }
        let st = build_system(&m).unwrap();
        assert_eq!(st.incidence().nrows(), uniq.len());
        assert_eq!(uniq.len(), 6);
    }

    #[test]
    fn identity_x_reproduces_source() {
        let m = primitives::organ_phantom(2);
        let st = build_system(&m).unwrap();
        let d = DMatrix::from(&st.data_matrix());
        let v = d * st.x_matrix();
        for (i, p) in m.vertices().iter().enumerate() {
            assert_eq!([v[(i, 0)], v[(i, 1)], v[(i, 2)]], [p.x, p.y, p.z]);
        }
        assert_eq!(st.deformed_vertices(), m.vertices());
    }

    #[test]
    fn zero_edge_mesh_errors() {
        let m = TriMesh::new(vec![Point3::origin()], vec![]).unwrap();
        assert!(matches!(build_system(&m), Err(Error::NoEdges)));
    }

    #[test]
    fn target_equal_source_keeps_identity() {
        let m = primitives::icosphere(3, 1.0);
        let mut st = build_system(&m).unwrap();
        st.solve_stage(&corr_to(m.vertices().to_vec(), 1.0), 20.0, 1e-6).unwrap();
        for b in st.affine_blocks() {
            assert!((b - identity_block()).abs().max() < 1e-6);
        }
    }

    #[test]
    fn all_zero_weights_error() {
        let m = primitives::icosphere(1, 1.0);
        let mut st = build_system(&m).unwrap();
        let err = st.solve_stage(&corr_to(m.vertices().to_vec(), 0.0), 1.0, 1e-6);
        assert!(matches!(err, Err(Error::NoValidCorrespondences)));
    }

    #[test]
    fn zero_weights_leave_identity_in_place() {
        let m = primitives::icosphere(2, 1.0);
        let mut st = build_system(&m).unwrap();
        let far: Vec<Point3<f64>> = m.vertices().iter().map(|p| p + Vector3::new(3.0, 0.0, 0.0)).collect();
        st.solve_unchecked(&corr_to(far, 0.0), 5.0, 1e-6).unwrap();
        for b in st.affine_blocks() {
            // exact in exact arithmetic; limited by cond(N) ~ α²/λ times eps
            let dev = (b - identity_block()).abs().max();
            assert!(dev < 1e-6, "deviation {dev}");
        }
    }

    #[test]
    fn huge_stiffness_gives_uniform_translation() {
        let m = primitives::icosphere(3, 1.0);
        let t = Vector3::new(0.3, -0.2, 0.1);
        let moved: Vec<Point3<f64>> = m.vertices().iter().map(|p| p + t).collect();
        let mut st = build_system(&m).unwrap();
        st.solve_stage(&corr_to(moved, 1.0), 1e6, 1e-6).unwrap();
        // oracle: the global rigid fit of a pure translation is the translation itself
        let shifts: Vec<Vector3<f64>> = st
            .deformed_vertices()
            .iter()
            .zip(m.vertices())
            .map(|(a, b)| a - b)
            .collect();
        let max_dev = shifts.iter().map(|s| (s - t).norm()).fold(0.0, f64::max);
        assert!(max_dev < 1e-3 * t.norm(), "max deviation {max_dev}");
    }

    #[test]
    fn larger_stiffness_reduces_block_variance() {
        let m = primitives::icosphere(2, 1.0);
        let target: Vec<Point3<f64>> = m
            .vertices()
            .iter()
            .map(|p| Point3::new(p.x * 1.3 + 0.1 * p.y * p.y, p.y, p.z * 0.8))
            .collect();
        let variance = |alpha: f64| {
            let mut st = build_system(&m).unwrap();
            st.solve_stage(&corr_to(target.clone(), 1.0), alpha, 1e-6).unwrap();
            let blocks = st.affine_blocks();
            let mean = blocks.iter().fold(Matrix4x3::zeros(), |a, b| a + b) / blocks.len() as f64;
            blocks.iter().map(|b| (b - mean).norm_squared()).sum::<f64>() / blocks.len() as f64
        };
        let mut prev = f64::INFINITY;
        for alpha in [0.2, 1.0, 5.0, 20.0] {
            let v = variance(alpha);
            assert!(v <= prev + 1e-15, "alpha {alpha}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn matches_dense_normal_equations() {
        // the assembled sparse system equals (AᵀA + λI) x = Aᵀb + λ x_prev built densely
        let m = primitives::tetrahedron();
        let st0 = build_system(&m).unwrap();
        let n = m.vertex_count();
        let pts: Vec<Point3<f64>> = m.vertices().iter().map(|p| p * 1.1 + Vector3::new(0.0, 0.2, 0.0)).collect();
        let w = [1.0, 0.5, 0.0, 2.0];
        let corr = Correspondences {
            points: pts.clone(),
            normals: vec![Vector3::z(); n],
            weights: w.to_vec(),
        };
        let (alpha, lambda) = (3.0, 1e-3);
        let s = DMatrix::from(&st0.incidence());
        let d = DMatrix::from(&st0.data_matrix());
        let e = s.nrows();
        let mut a = DMatrix::zeros(4 * e + n, 4 * n);
        for r in 0..e {
            for v in 0..n {
                for k in 0..4 {
                    a[(4 * r + k, 4 * v + k)] = alpha * s[(r, v)];
                }
            }
        }
        let mut b = DMatrix::zeros(4 * e + n, 3);
        for i in 0..n {
            for c in 0..4 * n {
                a[(4 * e + i, c)] = w[i] * d[(i, c)];
            }
            for k in 0..3 {
                b[(4 * e + i, k)] = w[i] * pts[i][k];
            }
        }
        let lhs = a.transpose() * &a + DMatrix::identity(4 * n, 4 * n) * lambda;
        let rhs = a.transpose() * b + st0.x_matrix() * lambda;
        let expect = lhs.cholesky().unwrap().solve(&rhs);
        let mut st = st0.clone();
        st.solve_stage(&corr, alpha, lambda).unwrap();
        assert!((st.x_matrix() - expect).abs().max() < 1e-10);
    }

    #[test]
    fn rcm_is_a_permutation() {
        let m = primitives::icosphere(3, 1.0);
        let st = build_system(&m).unwrap();
        let mut p = st.layout.perm.clone();
        p.sort_unstable();
        assert_eq!(p, (0..m.vertex_count()).collect::<Vec<_>>());
    }
}
