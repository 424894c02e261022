//! Evaluation of the built-in derivation rules.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::Point3;

use crate::geometry::{axis_angle_deg, fit_sphere, Axis, GeometryError, Plane, TriMesh};

use super::{MorphometryError, ParamValue, Rule};

/// A resolved rule input: either an upstream parameter value or one of the
/// context meshes.
pub(crate) enum Resolved<'a> {
    Value(&'a ParamValue),
    Mesh(&'a TriMesh),
}

pub(crate) fn apply_rule(
    param: &str,
    rule: &Rule,
    inputs: &[Resolved<'_>],
) -> Result<ParamValue, MorphometryError> {
    let bad = |expected: &'static str| MorphometryError::BadInputs {
        param: param.to_string(),
        rule: rule.format(),
        expected,
    };
    Ok(match rule {
        Rule::Primary => return Err(bad("a supplied value, not evaluation")),
        Rule::Midpoint => {
            let a = point_of(&inputs[0]).ok_or_else(|| bad("two points"))?;
            let b = point_of(&inputs[1]).ok_or_else(|| bad("two points"))?;
            ParamValue::Point(Point3::from((a.coords + b.coords) / 2.0))
        }
        Rule::AxisThrough => {
            let a = point_of(&inputs[0]).ok_or_else(|| bad("two points"))?;
            let b = point_of(&inputs[1]).ok_or_else(|| bad("two points"))?;
            if (b - a).norm() < 1e-12 {
                return Err(GeometryError::DegeneratePoints.into());
            }
            ParamValue::Axis(Axis::through(a, b))
        }
        Rule::SphereFitRegion { radius } => {
            let mesh = mesh_of(&inputs[0]).ok_or_else(|| bad("a mesh and a seed point"))?;
            let seed = point_of(&inputs[1]).ok_or_else(|| bad("a mesh and a seed point"))?;
            let region = geodesic_region(mesh, &seed, *radius)?;
            ParamValue::Sphere(fit_sphere(&region)?)
        }
        Rule::PlaneFromPoints => {
            let a = point_of(&inputs[0]).ok_or_else(|| bad("three points"))?;
            let b = point_of(&inputs[1]).ok_or_else(|| bad("three points"))?;
            let c = point_of(&inputs[2]).ok_or_else(|| bad("three points"))?;
            let n = (b - a).cross(&(c - a));
            if n.norm() < 1e-12 {
                return Err(GeometryError::DegeneratePoints.into());
            }
            ParamValue::Plane(Plane::new(a, n))
        }
        Rule::PlanePointNormal => {
            let p = point_of(&inputs[0]).ok_or_else(|| bad("a point and an axis"))?;
            let axis = axis_of(&inputs[1]).ok_or_else(|| bad("a point and an axis"))?;
            ParamValue::Plane(Plane::new(p, axis.direction.into_inner()))
        }
        Rule::OffsetPlane { distance } => {
            let plane = plane_of(&inputs[0]).ok_or_else(|| bad("a plane"))?;
            ParamValue::Plane(plane.offset(*distance))
        }
        Rule::ProjectOnPlane => {
            let p = point_of(&inputs[0]).ok_or_else(|| bad("a point and a plane"))?;
            let plane = plane_of(&inputs[1]).ok_or_else(|| bad("a point and a plane"))?;
            ParamValue::Point(plane.project(&p))
        }
        Rule::Distance => {
            let a = point_of(&inputs[0]).ok_or_else(|| bad("two points"))?;
            let b = point_of(&inputs[1]).ok_or_else(|| bad("two points"))?;
            ParamValue::Length((b - a).norm())
        }
        Rule::AngleBetween => {
            let a = axis_of(&inputs[0]).ok_or_else(|| bad("two axes"))?;
            let b = axis_of(&inputs[1]).ok_or_else(|| bad("two axes"))?;
            ParamValue::Angle(axis_angle_deg(a, b))
        }
        Rule::ExtremalPoint => {
            let axis = axis_of(&inputs[1]).ok_or_else(|| bad("a mesh or point set and an axis"))?;
            let dir = axis.direction.into_inner();
            let points: &[Point3<f64>] = match &inputs[0] {
                Resolved::Mesh(m) => &m.vertices,
                Resolved::Value(ParamValue::PointSet(ps)) => ps,
                _ => return Err(bad("a mesh or point set and an axis")),
            };
            let best = points
                .iter()
                .max_by(|a, b| {
                    a.coords.dot(&dir).partial_cmp(&b.coords.dot(&dir)).unwrap()
                })
                .ok_or(GeometryError::DegeneratePoints)?;
            ParamValue::Point(*best)
        }
    })
}

fn point_of(r: &Resolved<'_>) -> Option<Point3<f64>> {
    match r {
        Resolved::Value(ParamValue::Point(p)) => Some(*p),
        // a sphere stands in for its center (e.g. fitted head center)
        Resolved::Value(ParamValue::Sphere(s)) => Some(s.center),
        _ => None,
    }
}

fn axis_of<'a>(r: &'a Resolved<'_>) -> Option<&'a Axis> {
    match r {
        Resolved::Value(ParamValue::Axis(a)) => Some(a),
        _ => None,
    }
}

fn plane_of<'a>(r: &'a Resolved<'_>) -> Option<&'a Plane> {
    match r {
        Resolved::Value(ParamValue::Plane(p)) => Some(p),
        _ => None,
    }
}

fn mesh_of<'a>(r: &'a Resolved<'_>) -> Option<&'a TriMesh> {
    match r {
        Resolved::Mesh(m) => Some(m),
        _ => None,
    }
}

/// Mesh vertices within a geodesic (edge-graph) radius of the seed point,
/// by Dijkstra from the vertex nearest to the seed.
pub(crate) fn geodesic_region(
    mesh: &TriMesh,
    seed: &Point3<f64>,
    radius: f64,
) -> Result<Vec<Point3<f64>>, MorphometryError> {
    if mesh.vertices.is_empty() {
        return Err(MorphometryError::EmptyMesh);
    }
    let start = mesh
        .vertices
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (*a - seed).norm_squared().partial_cmp(&(*b - seed).norm_squared()).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap();

    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); mesh.vertices.len()];
    for tri in &mesh.triangles {
        for k in 0..3 {
            let a = tri[k] as usize;
            let b = tri[(k + 1) % 3];
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
            }
            let (a, b) = (b as usize, tri[k]);
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
            }
        }
    }

    let mut dist = vec![f64::INFINITY; mesh.vertices.len()];
    dist[start] = 0.0;
    let mut heap: BinaryHeap<Reverse<(OrdF64, usize)>> = BinaryHeap::new();
    heap.push(Reverse((OrdF64(0.0), start)));
    let mut region = Vec::new();
    while let Some(Reverse((OrdF64(d), v))) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        region.push(mesh.vertices[v]);
        for &n in &adjacency[v] {
            let n = n as usize;
            let nd = d + (mesh.vertices[n] - mesh.vertices[v]).norm();
            if nd <= radius && nd < dist[n] {
                dist[n] = nd;
                heap.push(Reverse((OrdF64(nd), n)));
            }
        }
    }
    Ok(region)
}

/// Total order on finite f64 for the Dijkstra heap.
#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_bone_at, BoneParams};
    use nalgebra::Vector3;

    #[test]
    fn midpoint_and_distance_are_exact() {
        let p = ParamValue::Point(Point3::new(0.0, 0.0, 0.0));
        let q = ParamValue::Point(Point3::new(2.0, 0.0, 0.0));
        let mid = apply_rule(
            "m",
            &Rule::Midpoint,
            &[Resolved::Value(&p), Resolved::Value(&q)],
        )
        .unwrap();
        match mid {
            ParamValue::Point(m) => assert_eq!(m, Point3::new(1.0, 0.0, 0.0)),
            _ => panic!("kind"),
        }
        let d = apply_rule(
            "d",
            &Rule::Distance,
            &[Resolved::Value(&p), Resolved::Value(&q)],
        )
        .unwrap();
        match d {
            ParamValue::Length(l) => assert!((l - 2.0).abs() < 1e-12),
            _ => panic!("kind"),
        }
    }

    #[test]
    fn angle_parallel_zero_orthogonal_ninety() {
        let o = Point3::origin();
        let ax = ParamValue::Axis(Axis::new(o, Vector3::x()));
        let ax2 = ParamValue::Axis(Axis::new(o, Vector3::x()));
        let ay = ParamValue::Axis(Axis::new(o, Vector3::y()));
        let zero = apply_rule(
            "a",
            &Rule::AngleBetween,
            &[Resolved::Value(&ax), Resolved::Value(&ax2)],
        )
        .unwrap();
        let ninety = apply_rule(
            "a",
            &Rule::AngleBetween,
            &[Resolved::Value(&ax), Resolved::Value(&ay)],
        )
        .unwrap();
        match (zero, ninety) {
            (ParamValue::Angle(z), ParamValue::Angle(n)) => {
                assert!(z.abs() < 1e-9);
                assert!((n - 90.0).abs() < 1e-9);
            }
            _ => panic!("kind"),
        }
    }

    #[test]
    fn extremal_point_on_voxelized_sphere_finds_pole() {
        // sphere of radius 10 about the origin, sampled at 1 mm
        let ball = crate::volume::ScalarGrid::sample(
            [25, 25, 25],
            [1.0; 3],
            [-12.0, -12.0, -12.0],
            |p| 10.0 - p.coords.norm(),
        );
        let mesh = crate::volume::marching_tets(&ball, 0.0);
        let axis = ParamValue::Axis(Axis::new(Point3::origin(), Vector3::z()));
        let top = apply_rule(
            "e",
            &Rule::ExtremalPoint,
            &[Resolved::Mesh(&mesh), Resolved::Value(&axis)],
        )
        .unwrap();
        match top {
            ParamValue::Point(p) => {
                assert!((p - Point3::new(0.0, 0.0, 10.0)).norm() < 0.5, "pole {p}");
            }
            _ => panic!("kind"),
        }
    }

    #[test]
    fn geodesic_region_stays_local() {
        let mesh = generate_bone_at(&BoneParams::default_femur(), 3.0).unwrap().0;
        let (lo, hi) = mesh.aabb();
        assert!(hi.z - lo.z > 400.0);
        let seed = Point3::new(0.0, 0.0, hi.z);
        let region = geodesic_region(&mesh, &seed, 20.0).unwrap();
        assert!(region.len() > 10);
        for p in &region {
            // euclidean distance is a lower bound on geodesic distance
            assert!((p - seed).norm() <= 20.0 + 3.0);
        }
        // far-away vertices are excluded
        assert!(region.iter().all(|p| p.z > hi.z - 25.0));
    }

    #[test]
    fn sphere_fit_region_recovers_head_radius() {
        let params = BoneParams::default_femur();
        let (mesh, truth) = generate_bone_at(&params, 2.5).unwrap();
        let apex = ParamValue::Point(truth.landmarks["Femoral Head Apex"]);
        let fitted = apply_rule(
            "s",
            &Rule::SphereFitRegion { radius: 25.0 },
            &[Resolved::Mesh(&mesh), Resolved::Value(&apex)],
        )
        .unwrap();
        match fitted {
            ParamValue::Sphere(s) => {
                assert!(
                    (s.radius - params.head_radius).abs() < 0.5,
                    "radius {} vs {}",
                    s.radius,
                    params.head_radius
                );
                let true_center = truth.landmarks["Femoral Head Apex"]
                    - Vector3::new(0.0, 0.0, params.head_radius);
                assert!((s.center - true_center).norm() < 0.5);
            }
            _ => panic!("kind"),
        }
    }
}
