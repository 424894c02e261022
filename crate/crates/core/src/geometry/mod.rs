//! Triangle-mesh data model, distance metrics, rigid registration and
//! geometric primitive fitting.

use nalgebra::{Matrix3, Point3, Unit, Vector3};
use thiserror::Error;

mod bvh;
mod checks;
mod fit;
mod icp;
mod metrics;
mod ply;
mod smooth;
mod stl;

pub use bvh::{closest_point_on_triangle, ray_triangle, TriBvh};
pub use checks::{
    count_self_intersections, mesh_checks, point_inside, self_intersection_pairs,
    wall_thickness, MeshChecks,
};
pub use fit::{fit_plane, fit_plane_oriented, fit_sphere};
pub use icp::{absolute_orientation, icp_register, IcpOptions};
pub use metrics::{hausdorff, point_to_surface, sample_points, surface_rmse};
pub use ply::{read_ply, read_ply_file, write_ply, write_ply_file};
pub use smooth::taubin_smooth;
pub use stl::{read_stl, read_stl_file, write_stl, write_stl_file};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("degenerate source points (collinear or coplanar)")]
    DegenerateSource,
    #[error("degenerate point set for primitive fit")]
    DegeneratePoints,
    #[error("triangle index {index} out of range for {vertices} vertices")]
    IndexOutOfRange { index: u32, vertices: usize },
    #[error("degenerate triangle with repeated vertex index {0}")]
    DegenerateTriangle(u32),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {format} data: {reason}")]
    Malformed { format: &'static str, reason: String },
}

/// Indexed triangle surface. Vertices in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        for tri in &triangles {
            for &i in tri {
                if i as usize >= n {
                    return Err(GeometryError::IndexOutOfRange { index: i, vertices: n });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(GeometryError::DegenerateTriangle(tri[0]));
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_points(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_centroid(&self, t: usize) -> Point3<f64> {
        let [a, b, c] = self.triangle_points(t);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn triangle_normal(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle_points(t);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::zeros()
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed volume by the divergence theorem; positive for outward-oriented
    /// closed surfaces.
    pub fn signed_volume(&self) -> f64 {
        let mut v = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_points(t);
            v += a.coords.dot(&b.coords.cross(&c.coords)) / 6.0;
        }
        v
    }

    pub fn centroid(&self) -> Point3<f64> {
        let mut acc = Vector3::zeros();
        for v in &self.vertices {
            acc += v.coords;
        }
        Point3::from(acc / self.vertices.len().max(1) as f64)
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|p| t.apply(p)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Directed edges that have no opposite partner. Empty for watertight,
    /// consistently oriented meshes.
    pub fn boundary_edges(&self) -> Vec<(u32, u32)> {
        use std::collections::HashMap;
        let mut count: HashMap<(u32, u32), i32> = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                let key = if a < b { (a, b) } else { (b, a) };
                let dir = if a < b { 1 } else { -1 };
                *count.entry(key).or_insert(0) += dir;
            }
        }
        let mut out: Vec<(u32, u32)> = count
            .into_iter()
            .filter(|&(_, c)| c != 0)
            .map(|(k, _)| k)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.boundary_edges().is_empty()
    }

    /// Vertex normals by area-weighted averaging of incident face normals.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_points(t);
            let n = (b - a).cross(&(c - a)); // area-weighted
            for &i in &self.triangles[t] {
                normals[i as usize] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Mirror across the x=0 plane, flipping triangle winding to keep
    /// outward orientation.
    pub fn mirrored_x(&self) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point3::new(-p.x, p.y, p.z))
                .collect(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
        }
    }
}

/// Rigid (optionally similarity) transform: `x ↦ scale · R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Self {
        debug_assert!(scale > 0.0);
        debug_assert!((rotation.transpose() * rotation - Matrix3::identity()).norm() < 1e-9);
        Self { rotation, translation, scale }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t, scale: 1.0 }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rot = self.rotation.transpose();
        let s = 1.0 / self.scale;
        Self {
            rotation: rot,
            translation: -s * (rot * self.translation),
            scale: s,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }
}

/// Oriented plane through `point` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Point3<f64>,
    pub normal: Unit<Vector3<f64>>,
}

impl Plane {
    pub fn new(point: Point3<f64>, normal: Vector3<f64>) -> Self {
        Self { point, normal: Unit::new_normalize(normal) }
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.signed_distance(p) * self.normal.into_inner()
    }

    pub fn offset(&self, distance: f64) -> Plane {
        Plane { point: self.point + distance * self.normal.into_inner(), normal: self.normal }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Plane {
        Plane {
            point: t.apply(&self.point),
            normal: Unit::new_normalize(t.apply_vector(&self.normal)),
        }
    }

    /// Orthonormal in-plane basis (u, v) with u × v = normal.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.normal.into_inner();
        let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = (seed - n * seed.dot(&n)).normalize();
        let v = n.cross(&u);
        (u, v)
    }
}

/// Infinite line through `point` along unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub point: Point3<f64>,
    pub direction: Unit<Vector3<f64>>,
}

impl Axis {
    pub fn new(point: Point3<f64>, direction: Vector3<f64>) -> Self {
        Self { point, direction: Unit::new_normalize(direction) }
    }

    pub fn through(a: Point3<f64>, b: Point3<f64>) -> Self {
        Self::new(a, b - a)
    }

    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        let d = self.direction.into_inner();
        self.point + d * (p - self.point).dot(&d)
    }

    pub fn distance_to(&self, p: &Point3<f64>) -> f64 {
        (p - self.project(p)).norm()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Axis {
        Axis {
            point: t.apply(&self.point),
            direction: Unit::new_normalize(t.apply_vector(&self.direction)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Point3<f64>,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Point3<f64>, radius: f64) -> Self {
        debug_assert!(radius > 0.0);
        Self { center, radius }
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        (p - self.center).norm() - self.radius
    }

    pub fn transformed(&self, t: &RigidTransform) -> Sphere {
        Sphere { center: t.apply(&self.center), radius: self.radius * t.scale }
    }
}

/// Angle between two directions in degrees, folded into [0, 90].
pub fn axis_angle_deg(a: &Axis, b: &Axis) -> f64 {
    let c = a.direction.dot(&b.direction).abs().clamp(0.0, 1.0);
    c.acos().to_degrees()
}
