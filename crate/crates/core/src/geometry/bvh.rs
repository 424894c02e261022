//! Bounding-volume hierarchy over mesh triangles for closest-point and ray
//! queries.

use nalgebra::{Point3, Vector3};

use super::TriMesh;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for i in 0..3 {
            self.lo[i] = self.lo[i].min(p[i]);
            self.hi[i] = self.hi[i].max(p[i]);
        }
    }

    fn merge(&mut self, other: &Aabb) {
        for i in 0..3 {
            self.lo[i] = self.lo[i].min(other.lo[i]);
            self.hi[i] = self.hi[i].max(other.hi[i]);
        }
    }

    fn sq_distance(&self, p: &Point3<f64>) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.lo[i] {
                self.lo[i] - p[i]
            } else if p[i] > self.hi[i] {
                p[i] - self.hi[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    fn ray_intersects(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.lo[i] - origin[i]) * inv_dir[i];
            let b = (self.hi[i] - origin[i]) * inv_dir[i];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug)]
enum Node {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

/// Static BVH with median splits; leaves hold a few triangles.
#[derive(Debug)]
pub struct TriBvh {
    tris: Vec<[Point3<f64>; 3]>,
    /// Original triangle index per stored triangle.
    ids: Vec<usize>,
    nodes: Vec<Node>,
    bounds: Vec<Aabb>,
    root: usize,
}

const LEAF_SIZE: usize = 4;

impl TriBvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let tris: Vec<[Point3<f64>; 3]> =
            (0..mesh.triangles.len()).map(|t| mesh.triangle_points(t)).collect();
        Self::build_from_triangles(tris)
    }

    pub fn build_from_triangles(tris: Vec<[Point3<f64>; 3]>) -> Self {
        let mut bvh = TriBvh {
            ids: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
            bounds: Vec::new(),
            root: 0,
        };
        if bvh.tris.is_empty() {
            bvh.nodes.push(Node::Leaf { start: 0, count: 0 });
            bvh.bounds.push(Aabb::empty());
            return bvh;
        }
        let n = bvh.tris.len();
        let mut order: Vec<usize> = (0..n).collect();
        let centroids: Vec<Point3<f64>> = bvh
            .tris
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let root = bvh.build_node(&mut order, &centroids, 0, n);
        // reorder triangle storage to match leaf ranges
        let tris = order.iter().map(|&i| bvh.tris[i]).collect();
        let ids = order.iter().map(|&i| bvh.ids[i]).collect();
        bvh.tris = tris;
        bvh.ids = ids;
        bvh.root = root;
        bvh
    }

    fn build_node(
        &mut self,
        order: &mut [usize],
        centroids: &[Point3<f64>],
        offset: usize,
        count: usize,
    ) -> usize {
        let mut bb = Aabb::empty();
        for &i in order[..count].iter() {
            for p in &self.tris[i] {
                bb.grow(p);
            }
        }
        if count <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start: offset, count });
            self.bounds.push(bb);
            return self.nodes.len() - 1;
        }
        // split along the widest centroid axis at the median
        let mut cb = Aabb::empty();
        for &i in order[..count].iter() {
            cb.grow(&centroids[i]);
        }
        let ext = cb.hi - cb.lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = count / 2;
        order[..count].select_nth_unstable_by(mid, |&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let (left_slice, right_slice) = order[..count].split_at_mut(mid);
        let left = self.build_node(left_slice, centroids, offset, mid);
        let right = self.build_node(right_slice, centroids, offset + mid, count - mid);
        self.nodes.push(Node::Inner { left, right });
        let mut merged = self.bounds[left];
        merged.merge(&self.bounds[right]);
        self.bounds.push(merged);
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Closest point on any triangle. Returns (distance, point, triangle id,
    /// barycentric coordinates on that triangle).
    pub fn closest_point(&self, p: &Point3<f64>) -> (f64, Point3<f64>, usize, [f64; 3]) {
        assert!(!self.tris.is_empty());
        let mut best = (f64::INFINITY, *p, 0usize, [0.0; 3]);
        self.closest_rec(self.root, p, &mut best);
        (best.0.sqrt(), best.1, best.2, best.3)
    }

    fn closest_rec(&self, node: usize, p: &Point3<f64>, best: &mut (f64, Point3<f64>, usize, [f64; 3])) {
        if self.bounds[node].sq_distance(p) >= best.0 {
            return;
        }
        match self.nodes[node] {
            Node::Leaf { start, count } => {
                for i in start..start + count {
                    let (d2, q, bary) = closest_point_on_triangle(p, &self.tris[i]);
                    // ties resolved toward the smaller original triangle id so
                    // results do not depend on tree layout
                    if d2 < best.0 || (d2 == best.0 && self.ids[i] < best.2) {
                        *best = (d2, q, self.ids[i], bary);
                    }
                }
            }
            Node::Inner { left, right } => {
                let dl = self.bounds[left].sq_distance(p);
                let dr = self.bounds[right].sq_distance(p);
                if dl <= dr {
                    self.closest_rec(left, p, best);
                    self.closest_rec(right, p, best);
                } else {
                    self.closest_rec(right, p, best);
                    self.closest_rec(left, p, best);
                }
            }
        }
    }

    /// All ray-triangle intersection parameters t in (0, t_max), unsorted.
    pub fn ray_hits(&self, origin: &Point3<f64>, dir: &Vector3<f64>, t_max: f64) -> Vec<f64> {
        let mut hits = Vec::new();
        if self.tris.is_empty() {
            return hits;
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        self.ray_rec(self.root, origin, dir, &inv, t_max, &mut hits);
        hits
    }

    fn ray_rec(
        &self,
        node: usize,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        inv: &Vector3<f64>,
        t_max: f64,
        hits: &mut Vec<f64>,
    ) {
        if !self.bounds[node].ray_intersects(origin, inv, t_max) {
            return;
        }
        match self.nodes[node] {
            Node::Leaf { start, count } => {
                for i in start..start + count {
                    if let Some(t) = ray_triangle(origin, dir, &self.tris[i]) {
                        if t > 0.0 && t < t_max {
                            hits.push(t);
                        }
                    }
                }
            }
            Node::Inner { left, right } => {
                self.ray_rec(left, origin, dir, inv, t_max, hits);
                self.ray_rec(right, origin, dir, inv, t_max, hits);
            }
        }
    }
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection).
/// Returns squared distance, the point, and its barycentric coordinates.
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    tri: &[Point3<f64>; 3],
) -> (f64, Point3<f64>, [f64; 3]) {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return finish(p, a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return finish(p, b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return finish(p, a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return finish(p, c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return finish(p, a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return finish(p, b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    finish(p, a + ab * v + ac * w, [1.0 - v - w, v, w])
}

fn finish(p: &Point3<f64>, q: Point3<f64>, bary: [f64; 3]) -> (f64, Point3<f64>, [f64; 3]) {
    ((p - q).norm_squared(), q, bary)
}

/// Möller–Trumbore; returns t or None for parallel/miss.
pub fn ray_triangle(origin: &Point3<f64>, dir: &Vector3<f64>, tri: &[Point3<f64>; 3]) -> Option<f64> {
    let [a, b, c] = *tri;
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&qvec) * inv_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn unit_tri() -> [Point3<f64>; 3] {
        [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ]
    }

    #[test]
    fn closest_point_face_interior() {
        let (d2, q, bary) = closest_point_on_triangle(&Point3::new(0.2, 0.2, 3.0), &unit_tri());
        assert!((d2 - 9.0).abs() < 1e-12);
        assert!((q - Point3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        assert!((bary[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn closest_point_vertex_and_edge() {
        let (d2, q, _) = closest_point_on_triangle(&Point3::new(-1.0, -1.0, 0.0), &unit_tri());
        assert!((q - Point3::new(0.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((d2 - 2.0).abs() < 1e-12);

        let (_, q, _) = closest_point_on_triangle(&Point3::new(0.5, -2.0, 0.0), &unit_tri());
        assert!((q - Point3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn ray_hits_triangle() {
        let t = ray_triangle(
            &Point3::new(0.2, 0.2, -1.0),
            &nalgebra::Vector3::new(0.0, 0.0, 1.0),
            &unit_tri(),
        );
        assert!((t.unwrap() - 1.0).abs() < 1e-12);
    }
}
