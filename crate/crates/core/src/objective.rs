//! Weighted contour Hausdorff cost, surface MSE and target registration error.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::labels::Channel;
use crate::mesh::TriMesh;
use crate::pose::RigidPose;
use crate::render::{extract_silhouette, render_full, LabelImageSet};
use crate::shape_model::ShapeModel;
use crate::spatial::{KdTree, TriangleBvh};

/// Per-channel weights indexed by [`Channel::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelWeights {
    pub w: [f64; 4],
}

impl LabelWeights {
    pub fn get(&self, c: Channel) -> f64 {
        self.w[c.index()]
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// `w_n = |L_n| / Σ|L|`, or 1/4 each when every channel is empty.
pub fn label_weights(masks: &LabelImageSet) -> LabelWeights {
    let counts: Vec<usize> = Channel::ALL.iter().map(|&c| masks.channel(c).count()).collect();
    weights_from_counts(&counts)
}

fn weights_from_counts(counts: &[usize]) -> LabelWeights {
    let total: usize = counts.iter().sum();
    let mut w = [0.25; 4];
    if total > 0 {
        for (wi, &c) in w.iter_mut().zip(counts) {
            *wi = c as f64 / total as f64;
        }
    }
    LabelWeights { w }
}

/// A 2D point set with its nearest-neighbor index.
#[derive(Debug, Clone)]
pub struct IndexedPoints {
    points: Vec<[f64; 2]>,
    tree: KdTree<2>,
}

impl IndexedPoints {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self {
            tree: KdTree::new(points.clone()),
            points,
        }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `sup_{a ∈ self} inf_{b ∈ other} ‖a − b‖`.
    pub fn directed_to(&self, other: &IndexedPoints) -> f64 {
        let worst = self
            .points
            .iter()
            .map(|a| other.tree.nearest(a).map_or(f64::INFINITY, |(_, d2)| d2))
            .fold(0.0, f64::max);
        worst.sqrt()
    }
}

/// Symmetric Hausdorff distance between indexed point sets.
pub fn hausdorff_indexed(a: &IndexedPoints, b: &IndexedPoints) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    Ok(a.directed_to(b).max(b.directed_to(a)))
}

/// Symmetric Hausdorff distance `max(sup_a inf_b ‖a−b‖, sup_b inf_a ‖a−b‖)`.
pub fn hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    hausdorff_indexed(&IndexedPoints::new(a.to_vec()), &IndexedPoints::new(b.to_vec()))
}

/// Per-channel cost terms for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    /// Hausdorff distance (px) per channel; `None` for skipped channels.
    /// Empty renders report the penalty.
    pub per_channel: [Option<f64>; 4],
}

/// Fixed inputs of the registration cost: target contours, their indices,
/// weights and camera. Cheap to share across parallel fitness evaluations.
#[derive(Debug, Clone)]
pub struct RegistrationProblem {
    pub camera: CameraIntrinsics,
    pub weights: LabelWeights,
    targets: [Option<IndexedPoints>; 4],
    penalty: f64,
}

impl RegistrationProblem {
    pub fn new(masks: &LabelImageSet, camera: CameraIntrinsics) -> Result<Self> {
        if masks.non_empty_channels() == 0 {
            return Err(Error::NothingToRegister);
        }
        if masks.width() != camera.width || masks.height() != camera.height {
            return Err(Error::FrameMismatch(format!(
                "masks are {}x{}, camera is {}x{}",
                masks.width(),
                masks.height(),
                camera.width,
                camera.height
            )));
        }
        let weights = label_weights(masks);
        let targets = Channel::ALL.map(|c| {
            (weights.get(c) > 0.0).then(|| IndexedPoints::new(extract_silhouette(masks.channel(c)).points()))
        });
        Ok(Self {
            penalty: camera.diagonal(),
            camera,
            weights,
            targets,
        })
    }

    /// Cost contribution of an empty rendered channel (image diagonal, px).
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// Weighted Hausdorff cost of a rendered label set against the targets.
    pub fn cost_of_render(&self, rendered: &LabelImageSet) -> CostBreakdown {
        let mut per_channel = [None; 4];
        let mut total = 0.0;
        for c in Channel::ALL {
            let Some(target) = &self.targets[c.index()] else {
                continue;
            };
            let pts = rendered.channel(c).points();
            let d = if pts.is_empty() {
                self.penalty
            } else {
                hausdorff_indexed(&IndexedPoints::new(pts), target).expect("both sets are non-empty")
            };
            per_channel[c.index()] = Some(d);
            total += self.weights.get(c) * d;
        }
        CostBreakdown { total, per_channel }
    }

    pub fn evaluate_mesh(&self, mesh: &TriMesh, pose: &RigidPose) -> CostBreakdown {
        self.cost_of_render(&render_full(mesh, pose, &self.camera))
    }

    pub fn evaluate(&self, model: &ShapeModel, pose: &RigidPose, alpha: &[f64]) -> CostBreakdown {
        self.evaluate_mesh(&model.eval(alpha), pose)
    }

    pub fn cost(&self, model: &ShapeModel, pose: &RigidPose, alpha: &[f64]) -> f64 {
        self.evaluate(model, pose, alpha).total
    }
}

/// `Σ_n w_n d_H(C_n(pose, α), ExtractContour(L_n))` over channels with `w_n > 0`.
pub fn registration_cost(
    model: &ShapeModel,
    pose: &RigidPose,
    alpha: &[f64],
    masks: &LabelImageSet,
    cam: &CameraIntrinsics,
) -> Result<f64> {
    Ok(RegistrationProblem::new(masks, *cam)?.cost(model, pose, alpha))
}

/// `(1/N) Σ ‖T_A T_pred p − T_B p‖²` over mesh vertices (mm²).
pub fn surface_mse(mesh: &TriMesh, t_a: &RigidPose, t_b: &RigidPose, t_pred: &RigidPose) -> Result<f64> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let lhs = t_a.compose(t_pred).to_isometry();
    let rhs = t_b.to_isometry();
    let sum: f64 = mesh.vertices().iter().map(|p| (lhs * p - rhs * p).norm_squared()).sum();
    Ok(sum / mesh.vertex_count() as f64)
}

/// A point carried by a surface triangle: closest-point barycentrics plus the
/// offset expressed in the triangle's local frame, so deformation moves it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetAttachment {
    pub face: usize,
    pub barycentric: [f64; 3],
    /// Offset along (edge, in-plane normal to edge, face normal).
    pub local_offset: [f64; 3],
}

fn triangle_frame(mesh: &TriMesh, face: usize) -> [Vector3<f64>; 3] {
    let [a, b, _] = mesh.faces()[face];
    let v = mesh.vertices();
    let e1 = (v[b] - v[a]).normalize();
    let n = mesh.face_cross(face).normalize();
    [e1, n.cross(&e1), n]
}

impl TargetAttachment {
    /// Attaches `p` to the nearest triangle of `reference`.
    pub fn new(reference: &TriMesh, p: &Point3<f64>) -> Result<Self> {
        if reference.face_count() == 0 {
            return Err(Error::EmptyMesh);
        }
        let bvh = TriangleBvh::new(reference.vertices(), reference.faces());
        let sp = bvh.closest_point(p).ok_or(Error::EmptyMesh)?;
        let frame = triangle_frame(reference, sp.face);
        let d = p - sp.point;
        Ok(Self {
            face: sp.face,
            barycentric: sp.barycentric,
            local_offset: [d.dot(&frame[0]), d.dot(&frame[1]), d.dot(&frame[2])],
        })
    }

    /// Position of the attached point on a mesh with the reference topology.
    pub fn locate(&self, mesh: &TriMesh) -> Point3<f64> {
        let f = mesh.faces()[self.face];
        let v = mesh.vertices();
        let base = v[f[0]].coords * self.barycentric[0]
            + v[f[1]].coords * self.barycentric[1]
            + v[f[2]].coords * self.barycentric[2];
        let frame = triangle_frame(mesh, self.face);
        let off = frame[0] * self.local_offset[0] + frame[1] * self.local_offset[1] + frame[2] * self.local_offset[2];
        Point3::from(base + off)
    }
}

/// Distance between the target mapped under (ground-truth pose, shape) and
/// under (estimated pose, shape). `p_target` is in canonical coordinates and
/// is attached to the model's mean shape.
pub fn target_registration_error(
    p_target: &Point3<f64>,
    pose_gt: &RigidPose,
    shape_gt: &[f64],
    pose_est: &RigidPose,
    shape_est: &[f64],
    model: &ShapeModel,
) -> Result<f64> {
    let reference = model.eval(&vec![0.0; model.components()]);
    let att = TargetAttachment::new(&reference, p_target)?;
    Ok(tre_with_attachment(&att, pose_gt, shape_gt, pose_est, shape_est, model))
}

/// [`target_registration_error`] with a precomputed attachment.
pub fn tre_with_attachment(
    att: &TargetAttachment,
    pose_gt: &RigidPose,
    shape_gt: &[f64],
    pose_est: &RigidPose,
    shape_est: &[f64],
    model: &ShapeModel,
) -> f64 {
    let gt = pose_gt.transform_point(&att.locate(&model.eval(shape_gt)));
    let est = pose_est.transform_point(&att.locate(&model.eval(shape_est)));
    (gt - est).norm()
}
