//! Point-to-point rigid ICP with Kabsch/SVD alignment.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::pose::RigidPose;
use crate::spatial::{KdTree, TriangleBvh};

/// Pairs farther than this multiple of the median pair distance are dropped.
pub const REJECTION_FACTOR: f64 = 3.0;

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<(Rotation3<f64>, Vector3<f64>)> {
    if src.len() != dst.len() || !spans_plane(src) {
        return Err(Error::RankDeficient);
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.ok_or(Error::RankDeficient)?, svd.v_t.ok_or(Error::RankDeficient)?);
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = Rotation3::from_matrix_unchecked(v * fix * u.transpose());
    let t = cd - r * cs;
    Ok((r, t))
}

/// True when the points contain at least three non-collinear members.
fn spans_plane(pts: &[Point3<f64>]) -> bool {
    if pts.len() < 3 {
        return false;
    }
    let c = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[0] > 0.0 && ev[1] > ev[0] * 1e-12
}

/// Rigidly aligns `source` to `target`. Starts from centroid alignment and
/// pairs each source vertex with its closest point on the target surface,
/// stopping after `max_iter` iterations or when the RMS of the retained pairs
/// changes by less than `tol` (mm). A few vertex-to-vertex iterations then
/// polish the result; they are kept only if they do not raise the surface RMS.
pub fn rigid_icp(source: &TriMesh, target: &TriMesh, max_iter: usize, tol: f64) -> Result<RigidPose> {
    if target.is_empty() || source.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let src = source.vertices();
    if !spans_plane(src) {
        return Err(Error::RankDeficient);
    }
    let tgt = target.vertices();
    let bvh = TriangleBvh::new(tgt, target.faces());
    let tree = KdTree::new(tgt.iter().map(|p| [p.x, p.y, p.z]).collect());
    let surface = |q: &Point3<f64>| -> Point3<f64> {
        match bvh.closest_point(q) {
            Some(sp) => sp.point,
            // target without faces: fall back to its vertices
            None => tgt[tree.nearest(&[q.x, q.y, q.z]).expect("target is non-empty").0],
        }
    };
    let vertex = |q: &Point3<f64>| -> Point3<f64> { tgt[tree.nearest(&[q.x, q.y, q.z]).expect("target is non-empty").0] };

    let mut est = (Rotation3::identity(), target.centroid().coords - source.centroid().coords);
    est = iterate(src, est, max_iter, tol, &surface);
    let base = trimmed_rms(src, &est, &surface);
    let polished = iterate(src, est, POLISH_ITERS.min(max_iter), tol, &vertex);
    if trimmed_rms(src, &polished, &surface) <= base {
        est = polished;
    }
    Ok(RigidPose::from_rotation_translation(&est.0, &est.1))
}

const POLISH_ITERS: usize = 10;

type Estimate = (Rotation3<f64>, Vector3<f64>);

/// Trimmed pairs `(source index, matched point, distance)` under `est`.
fn pairs(src: &[Point3<f64>], est: &Estimate, matcher: &impl Fn(&Point3<f64>) -> Point3<f64>) -> Vec<(usize, Point3<f64>, f64)> {
    let all: Vec<(usize, Point3<f64>, f64)> = src
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = Point3::from(est.0 * p.coords + est.1);
            let m = matcher(&q);
            (i, m, (m - q).norm())
        })
        .collect();
    let mut dists: Vec<f64> = all.iter().map(|p| p.2).collect();
    let mid = dists.len() / 2;
    dists.select_nth_unstable_by(mid, f64::total_cmp);
    let cutoff = REJECTION_FACTOR * dists[mid];
    all.into_iter().filter(|p| p.2 <= cutoff).collect()
}

fn trimmed_rms(src: &[Point3<f64>], est: &Estimate, matcher: &impl Fn(&Point3<f64>) -> Point3<f64>) -> f64 {
    let kept = pairs(src, est, matcher);
    (kept.iter().map(|p| p.2 * p.2).sum::<f64>() / kept.len() as f64).sqrt()
}

fn iterate(
    src: &[Point3<f64>],
    mut est: Estimate,
    max_iter: usize,
    tol: f64,
    matcher: &impl Fn(&Point3<f64>) -> Point3<f64>,
) -> Estimate {
    let mut prev_rms = f64::INFINITY;
    for iter in 0..max_iter {
        let kept = pairs(src, &est, matcher);
        let rms = (kept.iter().map(|p| p.2 * p.2).sum::<f64>() / kept.len() as f64).sqrt();
        log::trace!("icp iter {iter}: rms {rms:.6} mm over {} pairs", kept.len());
        if (prev_rms - rms).abs() < tol || rms == 0.0 {
            break;
        }
        prev_rms = rms;
        let s: Vec<Point3<f64>> = kept.iter().map(|p| src[p.0]).collect();
        let d: Vec<Point3<f64>> = kept.iter().map(|p| p.1).collect();
        match kabsch(&s, &d) {
            Ok(next) => est = next,
            // retained pairs collapsed onto a line; keep the last estimate
            Err(_) => break,
        }
    }
    est
}
