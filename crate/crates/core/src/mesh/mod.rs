//! Triangle meshes in millimeters with optional anatomical label polylines.

mod io;
pub mod primitives;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use nalgebra::{DVector, Point3, Vector3};

use crate::error::{Error, Result};
use crate::labels::AnatomicalLabel;
use crate::pose::RigidPose;

pub use io::{load_labels, load_mesh, save_labels, save_mesh, save_obj, save_ply, PlyFormat};

/// Ordered vertex-index polylines keyed by anatomical label.
pub type LabelPolylines = BTreeMap<AnatomicalLabel, Vec<usize>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeshMetadata {
    /// Some edge is shared by more than two faces.
    pub non_manifold: bool,
    pub source: Option<PathBuf>,
}

/// Immutable triangle mesh. Construction validates face and label indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    labels: LabelPolylines,
    normals: Option<Vec<Vector3<f64>>>,
    metadata: MeshMetadata,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::IndexOutOfRange {
                    face: fi,
                    index: bad,
                    vertex_count: n,
                });
            }
        }
        let non_manifold = has_non_manifold_edge(&faces);
        if non_manifold {
            log::warn!("mesh has non-manifold edges");
        }
        Ok(Self {
            vertices,
            faces,
            labels: LabelPolylines::new(),
            normals: None,
            metadata: MeshMetadata {
                non_manifold,
                source: None,
            },
        })
    }

    pub fn with_labels(mut self, labels: LabelPolylines) -> Result<Self> {
        let n = self.vertices.len();
        for (label, line) in &labels {
            if let Some(&bad) = line.iter().find(|&&i| i >= n) {
                return Err(Error::LabelOutOfRange {
                    label: label.name().to_string(),
                    index: bad,
                    vertex_count: n,
                });
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub(crate) fn with_source(mut self, source: PathBuf) -> Self {
        self.metadata.source = Some(source);
        self
    }

    /// Same faces and labels, new vertex positions. Cached normals are dropped.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::TopologyMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            labels: self.labels.clone(),
            normals: None,
            metadata: self.metadata.clone(),
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> &LabelPolylines {
        &self.labels
    }

    pub fn label(&self, label: AnatomicalLabel) -> Option<&[usize]> {
        self.labels.get(&label).map(Vec::as_slice)
    }

    /// Cached unit vertex normals, if computed.
    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn metadata(&self) -> &MeshMetadata {
        &self.metadata
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn same_topology(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    /// Unnormalized face normal (length is twice the face area).
    pub fn face_cross(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[face];
        let v = &self.vertices;
        (v[b] - v[a]).cross(&(v[c] - v[a]))
    }

    /// Area-weighted vertex normals. Degenerate faces contribute nothing;
    /// vertices touching only degenerate faces point away from the centroid.
    pub fn compute_vertex_normals(&self) -> Result<TriMesh> {
        if self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        let mut any = false;
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_cross(fi);
            if n.norm_squared() > 0.0 && n.iter().all(|x| x.is_finite()) {
                any = true;
                for &i in f {
                    acc[i] += n;
                }
            }
        }
        if !any {
            return Err(Error::NoValidNormals);
        }
        let centroid = self.centroid();
        let normals = acc
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    let r = self.vertices[i] - centroid;
                    if r.norm() > 0.0 {
                        r.normalize()
                    } else {
                        Vector3::z()
                    }
                }
            })
            .collect();
        let mut out = self.clone();
        out.normals = Some(normals);
        Ok(out)
    }

    /// `v' = R v + t` for every vertex; cached normals are rotated.
    pub fn apply_pose(&self, pose: &RigidPose) -> TriMesh {
        if *pose == RigidPose::identity() {
            return self.clone();
        }
        let r = pose.rotation_matrix();
        let t = pose.translation();
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = Point3::from(r * v.coords + t);
        }
        if let Some(ns) = &mut out.normals {
            for n in ns.iter_mut() {
                *n = r * *n;
            }
        }
        out
    }

    pub fn centroid(&self) -> Point3<f64> {
        if self.vertices.is_empty() {
            return Point3::origin();
        }
        let sum = self.vertices.iter().fold(Vector3::zeros(), |s, v| s + v.coords);
        Point3::from(sum / self.vertices.len() as f64)
    }

    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(&v.coords);
            hi = hi.sup(&v.coords);
        }
        (Point3::from(lo), Point3::from(hi))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Vertex coordinates flattened as `[x0, y0, z0, x1, ...]`.
    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.vertices.len() * 3,
            self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]),
        )
    }

    pub fn with_flat(&self, flat: &DVector<f64>) -> Result<TriMesh> {
        if flat.len() != 3 * self.vertices.len() {
            return Err(Error::TopologyMismatch(format!(
                "flat vector has length {}, expected {}",
                flat.len(),
                3 * self.vertices.len()
            )));
        }
        let verts = flat
            .as_slice()
            .chunks_exact(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        self.with_vertices(verts)
    }

    /// Number of connected components of the vertex graph (isolated vertices count).
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (a, b) in self.edges() {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        (0..parent.len()).filter(|&i| find(&mut parent, i) == i).count()
    }
}

fn has_non_manifold_edge(faces: &[[usize; 3]]) -> bool {
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    count.values().any(|&c| c > 2)
}

/// Free-function form of [`TriMesh::compute_vertex_normals`].
pub fn compute_vertex_normals(mesh: &TriMesh) -> Result<TriMesh> {
    mesh.compute_vertex_normals()
}

/// Free-function form of [`TriMesh::apply_pose`].
pub fn apply_pose(mesh: &TriMesh, pose: &RigidPose) -> TriMesh {
    mesh.apply_pose(pose)
}
