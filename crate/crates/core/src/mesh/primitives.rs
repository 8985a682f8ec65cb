//! Procedural meshes used by tests, benchmarks and the demo commands.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::{LabelPolylines, TriMesh};
use crate::labels::AnatomicalLabel;

/// Geodesic sphere from a subdivided icosahedron: `10·4^n + 2` vertices.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::from(*c).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let pts = verts.into_iter().map(|v| Point3::from(v * radius)).collect();
    TriMesh::new(pts, faces).expect("icosphere indices are valid")
}

/// Axis-aligned cube centered at the origin with `n × n` quads per side.
pub fn cube(n: usize, half_size: f64) -> TriMesh {
    assert!(n >= 1);
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let n_i = n as i64;
    // lattice coordinates run over 0..=n on each axis
    let mut vid = |c: [i64; 3], verts: &mut Vec<Point3<f64>>| {
        *index.entry(c).or_insert_with(|| {
            let f = |k: i64| (2.0 * k as f64 / n as f64 - 1.0) * half_size;
            verts.push(Point3::new(f(c[0]), f(c[1]), f(c[2])));
            verts.len() - 1
        })
    };
    for axis in 0..3 {
        for side in [0i64, n_i] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..n_i {
                for j in 0..n_i {
                    let corner = |di: i64, dj: i64| {
                        let mut c = [0i64; 3];
                        c[axis] = side;
                        c[u] = i + di;
                        c[v] = j + dj;
                        c
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    let ids: Vec<usize> = q.iter().map(|c| vid(*c, &mut verts)).collect();
                    // (u, v, axis) is right-handed: CCW in (u, v) faces +axis
                    if side == n_i {
                        faces.push([ids[0], ids[1], ids[2]]);
                        faces.push([ids[0], ids[2], ids[3]]);
                    } else {
                        faces.push([ids[0], ids[2], ids[1]]);
                        faces.push([ids[0], ids[3], ids[2]]);
                    }
                }
            }
        }
    }
    TriMesh::new(verts, faces).expect("cube indices are valid")
}

pub fn tetrahedron() -> TriMesh {
    TriMesh::new(
        vec![
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(1.0, -1.0, -1.0),
            Point3::new(-1.0, 1.0, -1.0),
            Point3::new(-1.0, -1.0, 1.0),
        ],
        vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    )
    .expect("tetrahedron indices are valid")
}

/// Icosphere scaled per axis.
pub fn ellipsoid(subdivisions: u32, axes: [f64; 3]) -> TriMesh {
    let s = icosphere(subdivisions, 1.0);
    let v = s
        .vertices()
        .iter()
        .map(|p| Point3::new(p.x * axes[0], p.y * axes[1], p.z * axes[2]))
        .collect();
    s.with_vertices(v).expect("same vertex count")
}

/// Asymmetric organ-like phantom (about 150 × 90 × 60 mm) with three labeled
/// curves on its anterior side. The anterior surface faces −z.
pub fn organ_phantom(subdivisions: u32) -> TriMesh {
    let sphere = icosphere(subdivisions, 1.0);
    let unit = sphere.vertices().to_vec();
    let shaped: Vec<Point3<f64>> = unit.iter().map(phantom_map).collect();

    let mut labels = LabelPolylines::new();
    let curve = |f: &dyn Fn(f64) -> (f64, f64)| -> Vec<usize> {
        let mut line: Vec<usize> = Vec::new();
        for k in 0..=60 {
            let (x, y) = f(k as f64 / 60.0);
            let z = -(1.0 - x * x - y * y).max(0.0).sqrt();
            let target = Vector3::new(x, y, z);
            let nearest = (0..unit.len())
                .min_by(|&a, &b| {
                    (unit[a].coords - target)
                        .norm_squared()
                        .total_cmp(&(unit[b].coords - target).norm_squared())
                })
                .expect("non-empty sphere");
            if line.last() != Some(&nearest) {
                line.push(nearest);
            }
        }
        line
    };
    labels.insert(AnatomicalLabel::RidgeR, curve(&|s| (0.15 + 0.7 * s, 0.45 - 0.15 * s)));
    labels.insert(AnatomicalLabel::RidgeL, curve(&|s| (-0.2 - 0.6 * s, 0.3 + 0.2 * s)));
    labels.insert(AnatomicalLabel::Lig, curve(&|s| (0.05 - 0.1 * s, -0.6 + 1.0 * s)));

    sphere
        .with_vertices(shaped)
        .and_then(|m| m.with_labels(labels))
        .expect("phantom is well formed")
}

fn phantom_map(p: &Point3<f64>) -> Point3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    // thicker right lobe, thin tapering left lobe, flattened posterior side
    let thickness = 1.0 + 0.35 * x;
    let zs = if z > 0.0 { 0.55 } else { 1.0 };
    let bump = 0.12 * (-(((x - 0.4).powi(2) + (y + 0.3).powi(2)) / 0.08)).exp();
    Point3::new(
        75.0 * x,
        45.0 * y * (1.0 + 0.15 * x) + 8.0 * x * x,
        30.0 * z * thickness * zs - 30.0 * bump,
    )
}
