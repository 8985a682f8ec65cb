//! Six degree-of-freedom rigid transforms.
//!
//! Rotations are parameterized by fixed-axis XYZ Euler angles in degrees:
//! the point is rotated about the x axis first, then y, then z, all axes
//! fixed in the parent frame (`R = Rz * Ry * Rx`). Translations are in
//! millimeters.

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    /// Fixed-axis XYZ Euler angles, degrees.
    pub rotation_deg: [f64; 3],
    /// Translation, millimeters.
    pub translation_mm: [f64; 3],
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub const fn identity() -> Self {
        Self {
            rotation_deg: [0.0; 3],
            translation_mm: [0.0; 3],
        }
    }

    pub const fn new(rotation_deg: [f64; 3], translation_mm: [f64; 3]) -> Self {
        Self {
            rotation_deg,
            translation_mm,
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self::new([0.0; 3], t)
    }

    pub fn from_rotation_translation(rotation: &Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        let (rx, ry, rz) = rotation.euler_angles();
        Self {
            rotation_deg: [rx.to_degrees(), ry.to_degrees(), rz.to_degrees()],
            translation_mm: [translation.x, translation.y, translation.z],
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::from_rotation_translation(&iso.rotation.to_rotation_matrix(), &iso.translation.vector)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        let [rx, ry, rz] = self.rotation_deg;
        Rotation3::from_euler_angles(rx.to_radians(), ry.to_radians(), rz.to_radians())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation_mm)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation()),
            UnitQuaternion::from_rotation_matrix(&self.rotation()),
        )
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation());
        m
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation().inverse();
        let t_inv = -(r_inv * self.translation());
        Self::from_rotation_translation(&r_inv, &t_inv)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> Self {
        let r = self.rotation() * other.rotation();
        let t = self.rotation() * other.translation() + self.translation();
        Self::from_rotation_translation(&r, &t)
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation() * p + self.translation()
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    /// Returns a point-transform closure with the rotation matrix precomputed.
    pub fn transformer(&self) -> impl Fn(&Point3<f64>) -> Point3<f64> {
        let r = self.rotation_matrix();
        let t = self.translation();
        move |p| Point3::from(r * p.coords + t)
    }

    /// Rotation angle (degrees) of `self⁻¹ ∘ other`.
    pub fn rotation_distance_deg(&self, other: &RigidPose) -> f64 {
        // atan2 form stays finite when rounding pushes the trace past 3
        let m = (self.rotation().inverse() * other.rotation()).into_inner();
        let skew = nalgebra::Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        (0.5 * skew.norm()).atan2(0.5 * (m.trace() - 1.0)).to_degrees()
    }

    pub fn translation_distance(&self, other: &RigidPose) -> f64 {
        (self.translation() - other.translation()).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_composes_with_inverse() {
        let p = RigidPose::new([12.0, -33.0, 71.0], [4.0, -9.5, 120.0]);
        let id = p.compose(&p.inverse());
        let m = id.to_homogeneous() - Matrix4::identity();
        assert!(m.norm() < 1e-9, "residual {}", m.norm());
    }

    #[test]
    fn euler_convention_is_fixed_xyz() {
        // 90° about x then 90° about z (fixed axes): e_y -> e_z -> e_z
        let p = RigidPose::new([90.0, 0.0, 90.0], [0.0; 3]);
        let v = p.transform_vector(&Vector3::y());
        assert!(close(v.z, 1.0, 1e-12));
        let v = p.transform_vector(&Vector3::x());
        assert!(close(v.y, 1.0, 1e-12));
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let a = RigidPose::from_translation([1.0, 0.0, 0.0]);
        let b = RigidPose::new([0.0, 0.0, 90.0], [0.0; 3]);
        let p = a.compose(&b).transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert!(close(p.x, 1.0, 1e-12) && close(p.y, 1.0, 1e-12));
    }
}
