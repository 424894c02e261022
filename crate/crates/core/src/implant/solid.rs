//! Implicit-solid construction: signed-distance primitives, CSG helpers and
//! a mesher that extracts a watertight surface and snaps vertices exactly
//! onto the analytic primitives they sample.

use nalgebra::{Point3, Vector3};

use crate::geometry::{Plane, Sphere, TriBvh, TriMesh};
use crate::volume::{marching_tets, ScalarGrid};

use super::ImplantError;

/// Signed distance to a capsule (segment `a`–`b` thickened by `r`).
pub(crate) fn sd_capsule(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, r: f64) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    ((p - a) - ab * t).norm() - r
}

/// Signed distance to an oriented box: `axes` are orthonormal, `half` the
/// half-extents along them.
pub(crate) fn sd_box(
    p: &Point3<f64>,
    center: &Point3<f64>,
    axes: &[Vector3<f64>; 3],
    half: &[f64; 3],
) -> f64 {
    let d = p - center;
    let q = [
        d.dot(&axes[0]).abs() - half[0],
        d.dot(&axes[1]).abs() - half[1],
        d.dot(&axes[2]).abs() - half[2],
    ];
    let outside = Vector3::new(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)).norm();
    let inside = q[0].max(q[1]).max(q[2]).min(0.0);
    outside + inside
}

/// Approximate signed distance to a closed mesh: unsigned distance from a
/// BVH, signed with an interpolated pseudo-normal. Adequate away from sharp
/// creases.
pub(crate) struct MeshSdf {
    bvh: TriBvh,
    mesh: TriMesh,
    normals: Vec<Vector3<f64>>,
}

impl MeshSdf {
    pub fn new(mesh: &TriMesh) -> Self {
        Self {
            bvh: TriBvh::build(mesh),
            mesh: mesh.clone(),
            normals: mesh.vertex_normals(),
        }
    }

    pub fn signed(&self, p: &Point3<f64>) -> f64 {
        let (d, q, tri, bary) = self.bvh.closest_point(p);
        let [a, b, c] = self.mesh.triangles[tri];
        let n = self.normals[a as usize] * bary[0]
            + self.normals[b as usize] * bary[1]
            + self.normals[c as usize] * bary[2];
        if (p - q).dot(&n) >= 0.0 {
            d
        } else {
            -d
        }
    }
}

/// Analytic surface a mesh vertex may be snapped onto after extraction.
/// `Wall` is the vertical extrusion of a polygon boundary in the local
/// (x, y) plane.
pub(crate) enum SnapSurface {
    Sphere(Sphere),
    Plane(Plane),
    Wall(super::contour::Polygon2),
}

impl SnapSurface {
    fn signed(&self, p: &Point3<f64>) -> f64 {
        match self {
            SnapSurface::Sphere(s) => s.signed_distance(p),
            SnapSurface::Plane(pl) => pl.signed_distance(p),
            SnapSurface::Wall(poly) => poly.signed_distance(&p.coords.xy().into()),
        }
    }

    fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        match self {
            SnapSurface::Sphere(s) => {
                let d = p - s.center;
                let n = d.norm();
                if n < 1e-12 {
                    *p
                } else {
                    s.center + d * (s.radius / n)
                }
            }
            SnapSurface::Plane(pl) => pl.project(p),
            SnapSurface::Wall(poly) => {
                let q = poly.boundary_closest(&p.coords.xy().into());
                Point3::new(q.x, q.y, p.z)
            }
        }
    }
}

/// Extracts the zero level set of `sdf` over the box `[lo, hi]` at node
/// spacing `h`, then pulls vertices lying near a snap surface exactly onto
/// it whenever that point is verifiably on the solid boundary.
pub(crate) fn mesh_sdf(
    sdf: &dyn Fn(&Point3<f64>) -> f64,
    lo: Point3<f64>,
    hi: Point3<f64>,
    h: f64,
    snaps: &[SnapSurface],
) -> Result<TriMesh, ImplantError> {
    assert!(h > 0.0);
    let margin = 2.0 * h;
    let origin = [lo.x - margin, lo.y - margin, lo.z - margin];
    let dims = [
        ((hi.x - lo.x + 2.0 * margin) / h).ceil() as usize + 1,
        ((hi.y - lo.y + 2.0 * margin) / h).ceil() as usize + 1,
        ((hi.z - lo.z + 2.0 * margin) / h).ceil() as usize + 1,
    ];
    let grid = ScalarGrid::sample(dims, [h, h, h], origin, |p| -sdf(&p));
    let mut mesh = marching_tets(&grid, 0.0);
    if mesh.is_empty() {
        return Err(ImplantError::InvalidGeometry(
            "implicit solid produced an empty surface".into(),
        ));
    }

    let accept = 0.45 * h;
    let original = mesh.vertices.clone();
    let mut moved = vec![false; mesh.vertices.len()];
    for (i, v) in mesh.vertices.iter_mut().enumerate() {
        // a primitive qualifies only when the vertex's distance to it
        // matches its (near-zero) distance to the full boundary, i.e. the
        // primitive is the active surface at the vertex; otherwise the
        // vertex sits on some other surface that merely passes nearby
        let on_boundary = sdf(v).abs();
        let mut best: Option<(f64, Point3<f64>)> = None;
        for s in snaps {
            let d = s.signed(v).abs();
            if d < accept
                && d <= on_boundary + 1e-7
                && best.map_or(true, |(bd, _)| d < bd)
            {
                let q = s.project(v);
                if sdf(&q).abs() < 1e-9 {
                    best = Some((d, q));
                }
            }
        }
        if let Some((_, q)) = best {
            *v = q;
            moved[i] = true;
        }
    }

    // near feature edges two neighbouring vertices can snap to different
    // primitives and fold a triangle over; revert the snaps of any triangle
    // whose orientation flipped or collapsed until the mesh is stable
    loop {
        let mut changed = false;
        for tri in &mesh.triangles {
            let [a, b, c] = [tri[0] as usize, tri[1] as usize, tri[2] as usize];
            if !(moved[a] || moved[b] || moved[c]) {
                continue;
            }
            let n_old = (original[b] - original[a]).cross(&(original[c] - original[a]));
            let n_new = (mesh.vertices[b] - mesh.vertices[a])
                .cross(&(mesh.vertices[c] - mesh.vertices[a]));
            if n_new.dot(&n_old) <= 1e-12 * n_old.norm_squared() {
                for &i in &[a, b, c] {
                    if moved[i] {
                        mesh.vertices[i] = original[i];
                        moved[i] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    // hairline crossings can survive along feature rims where two snapped
    // facets meet edge-on; revert the snaps of any intersecting pair
    loop {
        let pairs = crate::geometry::self_intersection_pairs(&mesh);
        let mut changed = false;
        for (a, b) in pairs {
            for t in [a, b] {
                for &i in &mesh.triangles[t] {
                    let i = i as usize;
                    if moved[i] {
                        mesh.vertices[i] = original[i];
                        moved[i] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(mesh)
}
