//! Spatial indices: a static k-d tree for exact nearest-neighbor queries on
//! point sets, and a bounding-volume hierarchy for closest-point queries on
//! triangle meshes.

use nalgebra::{Point3, Vector3};

const LEAF_SIZE: usize = 8;

/// Static k-d tree over `D`-dimensional points. Queries are exact; ties
/// resolve to the lowest input index.
#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

#[derive(Debug, Clone)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            build_kd(&points, &mut order, 0, n, &mut nodes);
        }
        Self { points, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; D] {
        &self.points[i]
    }

    /// Nearest point to `query`: `(index, squared distance)`.
    pub fn nearest(&self, query: &[f64; D]) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &[f64; D], best: &mut (usize, f64)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = sq_dist(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_kd<const D: usize>(
    points: &[[f64; D]],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<KdNode>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for &i in &order[start..end] {
        for a in 0..D {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..D)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] - lo[axis] == 0.0 {
        // all points coincide
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis])
    });
    let value = points[order[mid]][axis];
    nodes.push(KdNode::Leaf { start: 0, end: 0 });
    let left = build_kd(points, order, start, mid, nodes);
    let right = build_kd(points, order, mid, end, nodes);
    nodes[id] = KdNode::Split { axis, value, left, right };
    id
}

#[inline]
fn sq_dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

/// Result of a closest-point-on-mesh query.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint {
    pub face: usize,
    pub point: Point3<f64>,
    /// Barycentric coordinates of `point` in `face`.
    pub barycentric: [f64; 3],
    pub distance_sq: f64,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(&p.coords);
        self.max = self.max.sup(&p.coords);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    fn dist_sq(&self, p: &Point3<f64>) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let d = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            s += d * d;
        }
        s
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    // leaf when count > 0: faces order[first..first+count]
    first: usize,
    count: usize,
    left: usize,
    right: usize,
}

/// Bounding-volume hierarchy over mesh triangles.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    tris: Vec<[Point3<f64>; 3]>,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

impl TriangleBvh {
    pub fn new(vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> Self {
        let tris: Vec<[Point3<f64>; 3]> = faces
            .iter()
            .map(|f| [vertices[f[0]], vertices[f[1]], vertices[f[2]]])
            .collect();
        let centroids: Vec<Vector3<f64>> = tris
            .iter()
            .map(|t| (t[0].coords + t[1].coords + t[2].coords) / 3.0)
            .collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            let n = tris.len();
            build_bvh(&tris, &centroids, &mut order, 0, n, &mut nodes);
        }
        Self { tris, order, nodes }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Closest point on any triangle to `p`. Ties resolve to the lowest face index.
    pub fn closest_point(&self, p: &Point3<f64>) -> Option<SurfacePoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<SurfacePoint> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let bound = best.map_or(f64::INFINITY, |b| b.distance_sq);
            if node.bounds.dist_sq(p) > bound {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.first..node.first + node.count] {
                    let t = &self.tris[f];
                    let (q, bary) = closest_point_on_triangle(p, &t[0], &t[1], &t[2]);
                    let d = (q - p).norm_squared();
                    let better = match best {
                        None => true,
                        Some(b) => d < b.distance_sq || (d == b.distance_sq && f < b.face),
                    };
                    if better {
                        best = Some(SurfacePoint {
                            face: f,
                            point: q,
                            barycentric: bary,
                            distance_sq: d,
                        });
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = self.nodes[l].bounds.dist_sq(p);
                let dr = self.nodes[r].bounds.dist_sq(p);
                // visit nearer child first
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

fn build_bvh(
    tris: &[[Point3<f64>; 3]],
    centroids: &[Vector3<f64>],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &order[start..end] {
        let mut b = Aabb::empty();
        for v in &tris[f] {
            b.grow(v);
        }
        bounds.merge(&b);
        cbounds.grow(&Point3::from(centroids[f]));
    }
    let id = nodes.len();
    nodes.push(BvhNode {
        bounds,
        first: start,
        count: end - start,
        left: 0,
        right: 0,
    });
    if end - start <= 4 {
        return id;
    }
    let extent = cbounds.max - cbounds.min;
    let axis = extent.imax();
    if extent[axis] <= 0.0 {
        return id;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis])
    });
    let left = build_bvh(tris, centroids, order, start, mid, nodes);
    let right = build_bvh(tris, centroids, order, mid, end, nodes);
    let n = &mut nodes[id];
    n.count = 0;
    n.left = left;
    n.right = right;
    id
}

/// Closest point on triangle `abc` to `p` with its barycentric coordinates
/// (Ericson, Real-Time Collision Detection, 5.1.5).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> (Point3<f64>, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0])
            .collect();
        let tree = KdTree::new(pts.clone());
        for _ in 0..200 {
            let q = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), 1.0];
            let (i, d) = tree.nearest(&q).unwrap();
            let brute = pts.iter().map(|p| sq_dist(p, &q)).fold(f64::INFINITY, f64::min);
            assert_eq!(d, brute);
            assert_eq!(sq_dist(&pts[i], &q), brute);
        }
    }

    #[test]
    fn kd_tree_handles_duplicate_coordinates() {
        // a vertical pixel line: every point shares x
        let pts: Vec<[f64; 2]> = (0..1000).map(|y| [3.0, y as f64]).collect();
        let tree = KdTree::new(pts);
        let (i, d) = tree.nearest(&[0.0, 500.2]).unwrap();
        assert_eq!(i, 500);
        assert!((d - (9.0 + 0.04)).abs() < 1e-9);
        let same: Vec<[f64; 2]> = vec![[1.0, 1.0]; 100];
        assert_eq!(KdTree::new(same).nearest(&[0.0, 0.0]).unwrap().0, 0);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mesh = crate::mesh::primitives::icosphere(2, 1.0);
        let bvh = TriangleBvh::new(mesh.vertices(), mesh.faces());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let hit = bvh.closest_point(&p).unwrap();
            let brute = mesh
                .faces()
                .iter()
                .map(|f| {
                    let v = mesh.vertices();
                    let (q, _) = closest_point_on_triangle(&p, &v[f[0]], &v[f[1]], &v[f[2]]);
                    (q - p).norm_squared()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((hit.distance_sq - brute).abs() < 1e-12);
        }
    }
}
