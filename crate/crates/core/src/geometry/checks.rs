//! Mesh integrity checks: watertightness, self-intersection, wall thickness.

use nalgebra::{Point3, Vector3};
use std::collections::HashMap;

use super::{TriBvh, TriMesh};

#[derive(Debug, Clone)]
pub struct MeshChecks {
    pub watertight: bool,
    pub boundary_edge_count: usize,
    pub self_intersections: usize,
    pub volume: f64,
    /// Minimum wall thickness over sampled vertices away from sharp edges;
    /// None when the mesh is open or empty.
    pub min_wall_thickness: Option<f64>,
}

/// Runs all integrity checks. `rim_exclusion` is the distance (mm) from sharp
/// feature edges within which thickness samples are skipped, so tapered rims
/// do not dominate the wall measurement.
pub fn mesh_checks(m: &TriMesh, rim_exclusion: f64) -> MeshChecks {
    let boundary = m.boundary_edges();
    let watertight = !m.is_empty() && boundary.is_empty();
    let self_intersections = count_self_intersections(m);
    let volume = m.signed_volume();
    let min_wall_thickness = if watertight {
        wall_thickness(m, rim_exclusion)
    } else {
        None
    };
    MeshChecks {
        watertight,
        boundary_edge_count: boundary.len(),
        self_intersections,
        volume,
        min_wall_thickness,
    }
}

/// Counts intersecting triangle pairs that do not share a vertex, using a
/// uniform grid to prune candidates.
pub fn count_self_intersections(m: &TriMesh) -> usize {
    self_intersection_pairs(m).len()
}

/// The intersecting triangle pairs behind [`count_self_intersections`].
pub fn self_intersection_pairs(m: &TriMesh) -> Vec<(usize, usize)> {
    let n = m.triangles.len();
    if n < 2 {
        return Vec::new();
    }
    let (lo, hi) = m.aabb();
    let ext = hi - lo;
    let longest = ext.x.max(ext.y).max(ext.z).max(1e-9);
    // aim for a handful of triangles per cell
    let cells_per_axis = ((n as f64).cbrt().ceil() as i64).clamp(1, 128);
    let cell = longest / cells_per_axis as f64;

    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let key = |p: &Point3<f64>| {
        (
            ((p.x - lo.x) / cell).floor() as i64,
            ((p.y - lo.y) / cell).floor() as i64,
            ((p.z - lo.z) / cell).floor() as i64,
        )
    };
    let mut ranges = Vec::with_capacity(n);
    for t in 0..n {
        let pts = m.triangle_points(t);
        let mut kmin = key(&pts[0]);
        let mut kmax = kmin;
        for p in &pts[1..] {
            let k = key(p);
            kmin = (kmin.0.min(k.0), kmin.1.min(k.1), kmin.2.min(k.2));
            kmax = (kmax.0.max(k.0), kmax.1.max(k.1), kmax.2.max(k.2));
        }
        ranges.push((kmin, kmax));
        for x in kmin.0..=kmax.0 {
            for y in kmin.1..=kmax.1 {
                for z in kmin.2..=kmax.2 {
                    grid.entry((x, y, z)).or_default().push(t);
                }
            }
        }
    }

    let mut out = Vec::new();
    let mut seen: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    for list in grid.values() {
        for (ai, &a) in list.iter().enumerate() {
            for &b in &list[ai + 1..] {
                let pair = if a < b { (a, b) } else { (b, a) };
                if !seen.insert(pair) {
                    continue;
                }
                if shares_vertex(&m.triangles[pair.0], &m.triangles[pair.1]) {
                    continue;
                }
                if tri_tri_intersect(&m.triangle_points(pair.0), &m.triangle_points(pair.1)) {
                    out.push(pair);
                }
            }
        }
    }
    out
}

fn shares_vertex(a: &[u32; 3], b: &[u32; 3]) -> bool {
    a.iter().any(|i| b.contains(i))
}

/// Möller interval-overlap triangle-triangle intersection test.
/// Coplanar pairs are reported as non-intersecting.
pub fn tri_tri_intersect(t1: &[Point3<f64>; 3], t2: &[Point3<f64>; 3]) -> bool {
    const EPS: f64 = 1e-12;

    let n2 = (t2[1] - t2[0]).cross(&(t2[2] - t2[0]));
    let d2 = -n2.dot(&t2[0].coords);
    let dist1: Vec<f64> = t1.iter().map(|p| n2.dot(&p.coords) + d2).collect();
    if dist1.iter().all(|&d| d > EPS) || dist1.iter().all(|&d| d < -EPS) {
        return false;
    }

    let n1 = (t1[1] - t1[0]).cross(&(t1[2] - t1[0]));
    let d1 = -n1.dot(&t1[0].coords);
    let dist2: Vec<f64> = t2.iter().map(|p| n1.dot(&p.coords) + d1).collect();
    if dist2.iter().all(|&d| d > EPS) || dist2.iter().all(|&d| d < -EPS) {
        return false;
    }

    let dir = n1.cross(&n2);
    let max_comp = if dir.x.abs() >= dir.y.abs() && dir.x.abs() >= dir.z.abs() {
        0
    } else if dir.y.abs() >= dir.z.abs() {
        1
    } else {
        2
    };
    if dir[max_comp].abs() < EPS {
        return false; // coplanar
    }

    let i1 = interval(t1, &dist1, max_comp);
    let i2 = interval(t2, &dist2, max_comp);
    match (i1, i2) {
        (Some((a0, a1)), Some((b0, b1))) => a0.max(b0) < a1.min(b1) - EPS,
        _ => false,
    }
}

/// Projection interval of the triangle on the intersection line.
fn interval(t: &[Point3<f64>; 3], dist: &[f64], axis: usize) -> Option<(f64, f64)> {
    let proj: Vec<f64> = t.iter().map(|p| p[axis]).collect();
    // find the vertex on one side, the other two on the opposite side
    let mut split = None;
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        if dist[i] != 0.0 && (dist[i] > 0.0) != (dist[j] > 0.0) && (dist[i] > 0.0) != (dist[k] > 0.0)
        {
            split = Some(i);
            break;
        }
    }
    let i = split?;
    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
    let mut ts = [0.0f64; 2];
    for (slot, other) in [(0usize, j), (1usize, k)] {
        let denom = dist[i] - dist[other];
        if denom.abs() < 1e-300 {
            return None;
        }
        let f = dist[i] / denom;
        ts[slot] = proj[i] + f * (proj[other] - proj[i]);
    }
    Some(if ts[0] <= ts[1] { (ts[0], ts[1]) } else { (ts[1], ts[0]) })
}

/// Minimum wall thickness by casting rays inward from vertex normals,
/// skipping vertices within `rim_exclusion` of sharp feature edges.
pub fn wall_thickness(m: &TriMesh, rim_exclusion: f64) -> Option<f64> {
    if m.is_empty() {
        return None;
    }
    let normals = m.vertex_normals();
    let sharp = sharp_edge_vertices(m, 45.0);
    let sharp_pts: Vec<Point3<f64>> = sharp.iter().map(|&i| m.vertices[i as usize]).collect();
    let bvh = TriBvh::build(m);
    let (lo, hi) = m.aabb();
    let diag = (hi - lo).norm();

    let mut min_t = f64::INFINITY;
    for (i, v) in m.vertices.iter().enumerate() {
        if rim_exclusion > 0.0
            && sharp_pts.iter().any(|s| (s - v).norm() < rim_exclusion)
        {
            continue;
        }
        let dir = -normals[i];
        if dir.norm() < 0.5 {
            continue;
        }
        // nudge inside to avoid re-hitting the fan around the vertex
        let origin = v + dir * 1e-6;
        let mut hits = bvh.ray_hits(&origin, &dir, diag);
        hits.retain(|&t| t > 1e-6);
        hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if let Some(&t) = hits.first() {
            min_t = min_t.min(t);
        }
    }
    if min_t.is_finite() {
        Some(min_t)
    } else {
        None
    }
}

fn sharp_edge_vertices(m: &TriMesh, dihedral_deg: f64) -> Vec<u32> {
    let cos_limit = dihedral_deg.to_radians().cos();
    let mut edge_tris: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (t, tri) in m.triangles.iter().enumerate() {
        for e in 0..3 {
            let a = tri[e];
            let b = tri[(e + 1) % 3];
            let key = if a < b { (a, b) } else { (b, a) };
            edge_tris.entry(key).or_default().push(t);
        }
    }
    let mut out: Vec<u32> = Vec::new();
    for (&(a, b), tris) in &edge_tris {
        if tris.len() == 2 {
            let n0 = m.triangle_normal(tris[0]);
            let n1 = m.triangle_normal(tris[1]);
            if n0.dot(&n1) < cos_limit {
                out.push(a);
                out.push(b);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Convenience: is `p` inside the watertight mesh, by ray parity.
pub fn point_inside(bvh: &TriBvh, p: &Point3<f64>, extent: f64) -> bool {
    // slightly irrational direction to dodge edge-on hits
    let dir = Vector3::new(0.577_215_664, 0.301_029_995, 0.757_872_156).normalize();
    let hits = bvh.ray_hits(p, &dir, extent);
    hits.len() % 2 == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn disjoint_triangles_do_not_intersect() {
        let t1 = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let t2 = [
            Point3::new(0.0, 0.0, 5.0),
            Point3::new(1.0, 0.0, 5.0),
            Point3::new(0.0, 1.0, 5.0),
        ];
        assert!(!tri_tri_intersect(&t1, &t2));
    }

    #[test]
    fn crossing_triangles_intersect() {
        let t1 = [
            Point3::new(-1.0, -1.0, 0.0),
            Point3::new(2.0, -1.0, 0.0),
            Point3::new(-1.0, 2.0, 0.0),
        ];
        let t2 = [
            Point3::new(0.2, 0.2, -1.0),
            Point3::new(0.4, 0.2, 1.0),
            Point3::new(0.2, 0.4, 1.0),
        ];
        assert!(tri_tri_intersect(&t1, &t2));
    }

    #[test]
    fn closed_tetra_passes() {
        let m = crate::geometry::TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(0.0, 10.0, 0.0),
                Point3::new(0.0, 0.0, 10.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap();
        let checks = mesh_checks(&m, 0.0);
        assert!(checks.watertight);
        assert_eq!(checks.self_intersections, 0);
        assert!(checks.volume > 0.0);
    }

    #[test]
    fn missing_triangle_fails_watertight() {
        let m = crate::geometry::TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(0.0, 10.0, 0.0),
                Point3::new(0.0, 0.0, 10.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2]],
        )
        .unwrap();
        let checks = mesh_checks(&m, 0.0);
        assert!(!checks.watertight);
        assert_eq!(checks.boundary_edge_count, 3);
    }
}
