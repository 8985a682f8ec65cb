use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::spatial::{KdTree, TriangleBvh};

/// How target points are matched to deformed source vertices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrespondenceMode {
    /// Closest point anywhere on the target surface, normal interpolated.
    #[default]
    Surface,
    /// Closest target vertex (faster, coarser).
    Vertex,
}

/// Per-source-vertex matches with normal-gated weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    pub points: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl Correspondences {
    pub fn active(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Search structure over a target mesh, built once per registration.
#[derive(Debug, Clone)]
pub struct TargetIndex {
    mesh: TriMesh,
    mode: CorrespondenceMode,
    bvh: Option<TriangleBvh>,
    tree: Option<KdTree<3>>,
}

impl TargetIndex {
    pub fn new(target: &TriMesh, mode: CorrespondenceMode) -> Result<Self> {
        if target.is_empty() || target.face_count() == 0 {
            return Err(Error::EmptyMesh);
        }
        let mesh = match target.normals() {
            Some(_) => target.clone(),
            None => target.compute_vertex_normals()?,
        };
        let (bvh, tree) = match mode {
            CorrespondenceMode::Surface => (Some(TriangleBvh::new(mesh.vertices(), mesh.faces())), None),
            CorrespondenceMode::Vertex => (
                None,
                Some(KdTree::new(mesh.vertices().iter().map(|p| [p.x, p.y, p.z]).collect())),
            ),
        };
        Ok(Self { mesh, mode, bvh, tree })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    fn closest(&self, p: &Point3<f64>) -> (Point3<f64>, Vector3<f64>) {
        let normals = self.mesh.normals().expect("index meshes carry normals");
        match self.mode {
            CorrespondenceMode::Surface => {
                let hit = self
                    .bvh
                    .as_ref()
                    .and_then(|b| b.closest_point(p))
                    .expect("target has faces");
                let f = self.mesh.faces()[hit.face];
                let n = normals[f[0]] * hit.barycentric[0]
                    + normals[f[1]] * hit.barycentric[1]
                    + normals[f[2]] * hit.barycentric[2];
                let n = if n.norm() > 0.0 {
                    n.normalize()
                } else {
                    self.mesh.face_cross(hit.face).normalize()
                };
                (hit.point, n)
            }
            CorrespondenceMode::Vertex => {
                let (i, _) = self
                    .tree
                    .as_ref()
                    .and_then(|t| t.nearest(&[p.x, p.y, p.z]))
                    .expect("target has vertices");
                (self.mesh.vertices()[i], normals[i])
            }
        }
    }

    /// Nearest target point per vertex of `deformed`; weight `gamma` when the
    /// normals agree (`n · n* > theta`), zero otherwise.
    pub fn find(&self, deformed: &TriMesh, theta: f64, gamma: f64) -> Result<Correspondences> {
        let with_normals;
        let deformed = match deformed.normals() {
            Some(_) => deformed,
            None => {
                with_normals = deformed.compute_vertex_normals()?;
                &with_normals
            }
        };
        let src_normals = deformed.normals().expect("computed above");
        let matches: Vec<(Point3<f64>, Vector3<f64>, f64)> = deformed
            .vertices()
            .par_iter()
            .zip(src_normals.par_iter())
            .map(|(v, n)| {
                let (p, tn) = self.closest(v);
                let w = if n.dot(&tn) > theta { gamma } else { 0.0 };
                (p, tn, w)
            })
            .collect();
        let mut out = Correspondences {
            points: Vec::with_capacity(matches.len()),
            normals: Vec::with_capacity(matches.len()),
            weights: Vec::with_capacity(matches.len()),
        };
        for (p, n, w) in matches {
            out.points.push(p);
            out.normals.push(n);
            out.weights.push(w);
        }
        Ok(out)
    }
}

/// One-shot correspondence search (builds the index each call).
pub fn find_correspondences(
    deformed: &TriMesh,
    target: &TriMesh,
    theta: f64,
    gamma: f64,
) -> Result<Correspondences> {
    TargetIndex::new(target, CorrespondenceMode::Surface)?.find(deformed, theta, gamma)
}
