//! Coarse cubic B-spline free-form deformation toward a target surface.

use nalgebra::{DMatrix, Point3, Vector3};

use crate::geometry::{TriBvh, TriMesh};

/// What the deformation is fitted against. The `*Within` variants ignore
/// source vertices farther than the given distance from the target, so a
/// full surface can be relaxed toward partial data without dragging the
/// uncovered region.
pub enum RelaxTarget<'a> {
    Surface(&'a TriMesh),
    SurfaceWithin(&'a TriMesh, f64),
    Points(&'a [Point3<f64>]),
    PointsWithin(&'a [Point3<f64>], f64),
}

/// Cubic B-spline free-form deformation over the source bounding box.
///
/// The lattice has `lattice[a]` cells per axis (cell size = extent /
/// lattice dim), giving `(n+3)³` control displacements which minimize the
/// mean squared distance from deformed source vertices to the target plus
/// `reg` times the mean squared control displacement. The coarseness of
/// the lattice is the osteophyte filter: the deformation cannot express
/// wavelengths shorter than one cell.
pub fn bspline_relax(
    source: &TriMesh,
    target: RelaxTarget,
    lattice: [usize; 3],
    reg: f64,
) -> TriMesh {
    assert!(lattice.iter().all(|&n| n >= 2), "lattice dims must be at least 2");
    assert!(reg >= 0.0, "regularization must be nonnegative");

    let (lo, hi) = source.aabb();
    let pad = 1e-9;
    let origin = Vector3::new(lo.x - pad, lo.y - pad, lo.z - pad);
    let cell = Vector3::new(
        (hi.x - lo.x + 2.0 * pad) / lattice[0] as f64,
        (hi.y - lo.y + 2.0 * pad) / lattice[1] as f64,
        (hi.z - lo.z + 2.0 * pad) / lattice[2] as f64,
    );
    let cdims = [lattice[0] + 3, lattice[1] + 3, lattice[2] + 3];
    let n_ctrl = cdims[0] * cdims[1] * cdims[2];

    let (surface_bvh, points, max_dist) = match target {
        RelaxTarget::Surface(m) => (Some(TriBvh::build(m)), None, f64::INFINITY),
        RelaxTarget::SurfaceWithin(m, d) => (Some(TriBvh::build(m)), None, d),
        RelaxTarget::Points(p) => (None, Some(p), f64::INFINITY),
        RelaxTarget::PointsWithin(p, d) => (None, Some(p), d),
    };
    let closest = |p: &Point3<f64>| -> (f64, Point3<f64>) {
        if let Some(bvh) = &surface_bvh {
            let (d, q, _, _) = bvh.closest_point(p);
            (d, q)
        } else {
            let pts = points.unwrap();
            let mut best = (f64::INFINITY, *p);
            for q in pts {
                let d2 = (q - p).norm_squared();
                if d2 < best.0 {
                    best = (d2, *q);
                }
            }
            (best.0.sqrt(), best.1)
        }
    };

    // per-vertex basis support: 64 (control index, weight) pairs
    let supports: Vec<[(u32, f64); 64]> = source
        .vertices
        .iter()
        .map(|v| basis_support(v, &origin, &cell, lattice, cdims))
        .collect();

    let mut coeffs = DMatrix::<f64>::zeros(n_ctrl, 3);
    const OUTER: usize = 5;
    for _ in 0..OUTER {
        // match deformed vertices to the target
        let mut rows: Vec<(usize, Vector3<f64>)> = Vec::new();
        for (i, v) in source.vertices.iter().enumerate() {
            let cur = v + displacement(&supports[i], &coeffs);
            let (d, q) = closest(&cur);
            if d <= max_dist {
                rows.push((i, q - v));
            }
        }
        if rows.is_empty() {
            break;
        }
        let inv_p = 1.0 / rows.len() as f64;
        let mut ata = DMatrix::<f64>::zeros(n_ctrl, n_ctrl);
        let mut atb = DMatrix::<f64>::zeros(n_ctrl, 3);
        for (i, delta) in &rows {
            let sup = &supports[*i];
            for (a, &(ia, wa)) in sup.iter().enumerate() {
                for &(ib, wb) in sup.iter().skip(a) {
                    let v = wa * wb * inv_p;
                    ata[(ia as usize, ib as usize)] += v;
                    if ia != ib {
                        ata[(ib as usize, ia as usize)] += v;
                    }
                }
                for k in 0..3 {
                    atb[(ia as usize, k)] += wa * delta[k] * inv_p;
                }
            }
        }
        // per-control ridge: keeps the normalized data term and the
        // penalty on comparable scales regardless of lattice size
        let ridge = (reg / n_ctrl as f64).max(1e-12);
        for i in 0..n_ctrl {
            ata[(i, i)] += ridge;
        }
        let chol = match ata.cholesky() {
            Some(c) => c,
            None => break,
        };
        coeffs = chol.solve(&atb);
    }

    let vertices = source
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| v + displacement(&supports[i], &coeffs))
        .collect();
    TriMesh { vertices, triangles: source.triangles.clone() }
}

fn displacement(support: &[(u32, f64); 64], coeffs: &DMatrix<f64>) -> Vector3<f64> {
    let mut d = Vector3::zeros();
    for &(ci, w) in support {
        let r = ci as usize;
        d += w * Vector3::new(coeffs[(r, 0)], coeffs[(r, 1)], coeffs[(r, 2)]);
    }
    d
}

fn basis_support(
    p: &Point3<f64>,
    origin: &Vector3<f64>,
    cell: &Vector3<f64>,
    lattice: [usize; 3],
    cdims: [usize; 3],
) -> [(u32, f64); 64] {
    let mut axis_w = [[0.0f64; 4]; 3];
    let mut axis_i = [0usize; 3];
    for a in 0..3 {
        let u = ((p[a] - origin[a]) / cell[a]).clamp(0.0, lattice[a] as f64 - 1e-12);
        let i = (u.floor() as usize).min(lattice[a] - 1);
        let t = u - i as f64;
        axis_i[a] = i;
        axis_w[a] = cubic_bspline_weights(t);
    }
    let mut out = [(0u32, 0.0f64); 64];
    let mut k = 0;
    for dz in 0..4 {
        for dy in 0..4 {
            for dx in 0..4 {
                let ci = (axis_i[0] + dx)
                    + cdims[0] * ((axis_i[1] + dy) + cdims[1] * (axis_i[2] + dz));
                out[k] = (ci as u32, axis_w[0][dx] * axis_w[1][dy] * axis_w[2][dz]);
                k += 1;
            }
        }
    }
    out
}

fn cubic_bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::surface_rmse;
    use crate::synth::{add_osteophytes, generate_bone_at, BoneParams};

    fn coarse_femur() -> TriMesh {
        generate_bone_at(&BoneParams::default_femur(), 5.0).unwrap().0
    }

    #[test]
    fn identity_target_gives_zero_displacement() {
        let m = coarse_femur();
        let relaxed = bspline_relax(&m, RelaxTarget::Surface(&m), [6, 6, 6], 1e-2);
        for (a, b) in m.vertices.iter().zip(&relaxed.vertices) {
            assert!((a - b).norm() < 1e-6, "moved by {}", (a - b).norm());
        }
    }

    #[test]
    fn global_bend_recovered() {
        let m = coarse_femur();
        let (lo, hi) = m.aabb();
        let span = hi.z - lo.z;
        let mut bent = m.clone();
        for v in bent.vertices.iter_mut() {
            let t = (v.z - lo.z) / span;
            v.y += 8.0 * t * t;
        }
        let before = surface_rmse(&m, &bent, 0).unwrap();
        let relaxed = bspline_relax(&m, RelaxTarget::Surface(&bent), [6, 6, 6], 1e-2);
        let after = surface_rmse(&relaxed, &bent, 0).unwrap();
        assert!(after < 0.5 * before, "before {before} after {after}");
    }

    #[test]
    fn local_bump_mostly_rejected() {
        let m = coarse_femur();
        let bumped = add_osteophytes(&m, 1, 3.0, 5.0, 3);
        // apex = vertex displaced the most
        let apex = (0..m.vertices.len())
            .max_by(|&a, &b| {
                let da = (bumped.vertices[a] - m.vertices[a]).norm();
                let db = (bumped.vertices[b] - m.vertices[b]).norm();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let bump_height = (bumped.vertices[apex] - m.vertices[apex]).norm();
        assert!(bump_height > 2.5);
        let relaxed = bspline_relax(&m, RelaxTarget::Surface(&bumped), [6, 6, 6], 1e-2);
        let reproduced = (relaxed.vertices[apex] - m.vertices[apex]).norm();
        assert!(
            reproduced < 0.3 * bump_height,
            "reproduced {reproduced} of {bump_height}"
        );
    }
}
