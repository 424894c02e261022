//! Signed-distance primitives used to model the synthetic bones.
//!
//! Convention: negative inside. Union = min, subtraction = max(a, -b).

use nalgebra::{Point3, Vector3};

pub fn sd_sphere(p: &Point3<f64>, center: &Point3<f64>, radius: f64) -> f64 {
    (p - center).norm() - radius
}

/// Rounded axis-aligned box: center `c`, half-extents `h` (before
/// rounding), corner radius `r`.
pub fn sd_round_box(p: &Point3<f64>, c: &Point3<f64>, h: &Vector3<f64>, r: f64) -> f64 {
    let q = Vector3::new(
        (p.x - c.x).abs() - (h.x - r),
        (p.y - c.y).abs() - (h.y - r),
        (p.z - c.z).abs() - (h.z - r),
    );
    let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside - r
}

pub fn sd_segment(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, radius: f64) -> f64 {
    let pa = p - a;
    let ba = b - a;
    let t = (pa.dot(&ba) / ba.dot(&ba)).clamp(0.0, 1.0);
    (pa - ba * t).norm() - radius
}

/// Tube of constant radius around a polyline (min over capsule segments).
pub fn sd_polyline_tube(p: &Point3<f64>, pts: &[Point3<f64>], radius: f64) -> f64 {
    let mut d = f64::INFINITY;
    for w in pts.windows(2) {
        d = d.min(sd_segment(p, &w[0], &w[1], radius));
    }
    d
}

/// Cylinder with axis parallel to z through (cx, cy), capped to
/// z ∈ [z0, z1]. Used as a carve solid only, so the (slightly inexact)
/// max-combination of the cap planes is fine.
pub fn sd_capped_zcylinder(p: &Point3<f64>, cx: f64, cy: f64, radius: f64, z0: f64, z1: f64) -> f64 {
    let radial = ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt() - radius;
    let axial = (z0 - p.z).max(p.z - z1);
    radial.max(axial)
}
