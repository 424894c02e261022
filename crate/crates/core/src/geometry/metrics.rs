//! Surface distance metrics (point-to-surface, RMSE, Hausdorff).

use nalgebra::Point3;

use super::{GeometryError, TriBvh, TriMesh};

/// Unsigned distance from `p` to the closest point on `m`.
pub fn point_to_surface(p: &Point3<f64>, m: &TriMesh) -> Result<(f64, Point3<f64>), GeometryError> {
    if m.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let bvh = TriBvh::build(m);
    let (d, q, _, _) = bvh.closest_point(p);
    Ok((d, q))
}

/// Root-mean-square vertex-to-surface distance from `a` to `b`.
///
/// With `samples = 0` the vertices of `a` are used directly; otherwise each
/// triangle of `a` is additionally sampled proportionally to its area until
/// roughly `samples` points are reached (deterministic stratified midpoints).
pub fn surface_rmse(a: &TriMesh, b: &TriMesh, samples: usize) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let bvh = TriBvh::build(b);
    let pts = sample_points(a, samples);
    let mut acc = 0.0;
    for p in &pts {
        let (d, _, _, _) = bvh.closest_point(p);
        acc += d * d;
    }
    Ok((acc / pts.len() as f64).sqrt())
}

/// Symmetric Hausdorff distance, vertex-to-surface in both directions.
pub fn hausdorff(a: &TriMesh, b: &TriMesh) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

fn directed_hausdorff(a: &TriMesh, b: &TriMesh) -> f64 {
    let bvh = TriBvh::build(b);
    let mut worst = 0.0f64;
    for p in &a.vertices {
        let (d, _, _, _) = bvh.closest_point(p);
        worst = worst.max(d);
    }
    worst
}

/// Vertices of `a`, plus deterministic per-triangle refinement when more
/// samples are requested than vertices exist.
pub fn sample_points(a: &TriMesh, samples: usize) -> Vec<Point3<f64>> {
    let mut pts = a.vertices.clone();
    if samples > pts.len() {
        let extra = samples - pts.len();
        let total_area = a.surface_area();
        if total_area > 0.0 {
            for t in 0..a.triangles.len() {
                let share = a.triangle_area(t) / total_area;
                let n = (share * extra as f64).round() as usize;
                let [p0, p1, p2] = a.triangle_points(t);
                for k in 0..n {
                    // low-discrepancy barycentric sequence
                    let r1 = ((k as f64 + 0.5) * 0.754_877_666_246_693).fract();
                    let r2 = ((k as f64 + 0.5) * 0.569_840_290_998_053).fract();
                    let (u, v) = if r1 + r2 > 1.0 { (1.0 - r1, 1.0 - r2) } else { (r1, r2) };
                    pts.push(Point3::from(
                        p0.coords * (1.0 - u - v) + p1.coords * u + p2.coords * v,
                    ));
                }
            }
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriMesh;
    use nalgebra::Point3;

    fn square() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn point_on_vertex_is_zero() {
        let m = square();
        let (d, _) = point_to_surface(&Point3::new(0.0, 0.0, 0.0), &m).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn point_above_interior() {
        let m = square();
        let (d, q) = point_to_surface(&Point3::new(0.5, 0.5, 2.0), &m).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert!((q - Point3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn identical_meshes_zero_metrics() {
        let m = square();
        assert_eq!(surface_rmse(&m, &m, 0).unwrap(), 0.0);
        assert_eq!(hausdorff(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn translated_square_rmse() {
        let m = square();
        let mut shifted = m.clone();
        for v in &mut shifted.vertices {
            v.z += 7.0;
        }
        let r = surface_rmse(&shifted, &m, 0).unwrap();
        assert!((r - 7.0).abs() < 1e-12);
        assert!((hausdorff(&shifted, &m).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mesh_rejected() {
        let empty = TriMesh::new(vec![], vec![]).unwrap();
        assert!(point_to_surface(&Point3::origin(), &empty).is_err());
    }
}
