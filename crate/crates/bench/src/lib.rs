//! Shared fixtures for the benchmarks.

use deformreg_core::mesh::primitives::organ_phantom;
use deformreg_core::{CameraIntrinsics, RigidPose, TriMesh};

/// Phantom at a typical working distance in a 640×480 view.
pub fn scene() -> (TriMesh, RigidPose, CameraIntrinsics) {
    (
        organ_phantom(3),
        RigidPose::new([10.0, -15.0, 5.0], [5.0, -3.0, 400.0]),
        CameraIntrinsics::centered(500.0, 640, 480),
    )
}

/// `n` deterministic points on a wobbly circle, for distance benchmarks.
pub fn contour_points(n: usize, phase: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            let r = 150.0 + 12.0 * (5.0 * t + phase).sin();
            [320.0 + r * t.cos(), 240.0 + r * t.sin()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_visible() {
        let (mesh, pose, cam) = scene();
        let set = deformreg_core::render::render_full(&mesh, &pose, &cam);
        assert!(set.non_empty_channels() >= 2);
        assert_eq!(contour_points(10, 0.0).len(), 10);
    }
}
