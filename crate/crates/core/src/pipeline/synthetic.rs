//! Synthetic corpora and scenes with known ground truth.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mesh::TriMesh;
use crate::pose::RigidPose;

/// Peak displacement (mm) of each planted mode at unit coefficient.
pub const MODE_AMPLITUDES_MM: [f64; 4] = [12.0, 8.0, 6.0, 4.0];

/// Smooth displacement field of planted mode `k` at `p`, for a mesh with
/// bounding-box center `c` and half-extent `h`.
fn mode(k: usize, p: &Point3<f64>, c: &Point3<f64>, h: &Vector3<f64>) -> Vector3<f64> {
    let u = (p - c).component_div(h);
    let a = MODE_AMPLITUDES_MM[k];
    match k {
        // bending along the long axis
        0 => Vector3::new(0.0, 0.0, a * (u.x * u.x - 0.5)),
        // one-sided lobe growth
        1 => Vector3::new(a * u.x * if u.x > 0.0 { 1.0 } else { 0.3 }, 0.0, 0.0),
        // twist about the long axis
        2 => Vector3::new(0.0, a * u.x * u.z, -a * u.x * u.y),
        // flattening that fades toward the ends
        _ => Vector3::new(0.0, 0.0, -a * u.z * (1.0 - 0.5 * u.x * u.x)),
    }
}

/// `base` displaced by `Σ c_k mode_k`; `coeffs` may be shorter than four.
pub fn deform(base: &TriMesh, coeffs: &[f64]) -> TriMesh {
    let (lo, hi) = base.bounding_box();
    let c = nalgebra::center(&lo, &hi);
    let h = ((hi - lo) / 2.0).map(|v| v.max(1e-9));
    let verts = base
        .vertices()
        .iter()
        .map(|p| {
            let d: Vector3<f64> = coeffs.iter().take(4).enumerate().map(|(k, &ck)| mode(k, p, &c, &h) * ck).sum();
            p + d
        })
        .collect();
    base.with_vertices(verts).expect("same vertex count")
}

/// `n` corresponded copies of `base` with standard-normal mode coefficients.
/// When `misalign` is set each copy also receives a small random rigid motion
/// (up to 5° and 10 mm per axis).
pub fn synthetic_corpus(base: &TriMesh, n: usize, misalign: bool, rng: &mut impl Rng) -> Vec<TriMesh> {
    (0..n)
        .map(|_| {
            let coeffs: Vec<f64> = (0..4).map(|_| StandardNormal.sample(rng)).collect();
            let mesh = deform(base, &coeffs);
            if misalign {
                let mut u = |r: f64| rng.random_range(-r..=r);
                let pose = RigidPose::new([u(5.0), u(5.0), u(5.0)], [u(10.0), u(10.0), u(10.0)]);
                mesh.apply_pose(&pose)
            } else {
                mesh
            }
        })
        .collect()
}

/// Uniform offset inside the `±t_range` / `±r_range` box around `base`.
pub fn sample_pose_around(base: &RigidPose, t_range: f64, r_range: f64, rng: &mut impl Rng) -> RigidPose {
    let mut u = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let rot = base.rotation_deg.map(|v| v + u(r_range));
    let trans = base.translation_mm.map(|v| v + u(t_range));
    RigidPose::new(rot, trans)
}

/// Perturbation with translation norm at most `t_max` and Euler-offset norm
/// at most `r_max`, both uniform in magnitude over a random direction.
pub fn perturb_pose(pose: &RigidPose, t_max: f64, r_max: f64, rng: &mut impl Rng) -> RigidPose {
    let mut dir = || {
        let v: Vector3<f64> = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        v / v.norm().max(1e-12)
    };
    let (dt, dr) = (dir(), dir());
    let (mt, mr) = (rng.random_range(0.0..=t_max), rng.random_range(0.0..=r_max));
    let mut out = *pose;
    for i in 0..3 {
        out.translation_mm[i] += dt[i] * mt;
        out.rotation_deg[i] += dr[i] * mr;
    }
    out
}
