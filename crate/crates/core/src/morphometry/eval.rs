//! Landmark propagation, mesh adjustment, graph evaluation and error
//! statistics.

use std::collections::BTreeMap;

use nalgebra::Point3;

use crate::geometry::{point_to_surface, TriMesh};
use crate::ssm::{FitResult, ShapeModel};

use super::registry::{ParamRegistry, Rule};
use super::rules::{apply_rule, Resolved};
use super::{MorphometryError, MorphometryResult, ParamOutcome, ParamValue, Provenance};

/// Meshes available to mesh-consuming rules during evaluation.
#[derive(Default, Clone, Copy)]
pub struct EvalContext<'a> {
    /// Fitted model surface in the patient frame.
    pub fitted: Option<&'a TriMesh>,
    /// Segmented patient surface.
    pub segmented: Option<&'a TriMesh>,
}

/// Reads the landmark vertices off the fitted surface and maps them into
/// the patient frame (the inverse of the fit transform, which goes from
/// patient to model frame).
pub fn propagate_primary(
    fit: &FitResult,
    model: &ShapeModel,
) -> Result<BTreeMap<String, Point3<f64>>, MorphometryError> {
    let inv = fit.transform.inverse();
    let mut out = BTreeMap::new();
    for (label, &idx) in &model.landmark_indices {
        let Some(v) = fit.fitted_mesh.vertices.get(idx as usize) else {
            return Err(MorphometryError::LandmarkIndexOutOfRange {
                label: label.clone(),
                index: idx,
                vertices: fit.fitted_mesh.vertices.len(),
            });
        };
        out.insert(label.clone(), inv.apply(v));
    }
    Ok(out)
}

/// Pulls a propagated landmark toward the segmented surface: the result
/// lies on the segment from the initial point to its closest surface
/// point, a fraction `weight` of the way.
pub fn adjust_to_mesh(
    initial: &Point3<f64>,
    segmented: &TriMesh,
    weight: f64,
) -> Result<Point3<f64>, MorphometryError> {
    assert!((0.0..=1.0).contains(&weight), "weight must lie in [0, 1]");
    if segmented.is_empty() {
        return Err(MorphometryError::EmptyMesh);
    }
    let (_, closest) = point_to_surface(initial, segmented)?;
    Ok(initial + weight * (closest - initial))
}

/// Evaluates the registry in topological order. Primaries are taken from
/// `primaries` with their recorded provenance; derivation failures are
/// isolated — everything downstream of a failed node is marked failed,
/// independent branches still evaluate. Never errors: every registry name
/// gets an entry.
pub fn eval_graph(
    registry: &ParamRegistry,
    primaries: &BTreeMap<String, (ParamValue, Provenance)>,
    ctx: &EvalContext<'_>,
) -> MorphometryResult {
    let mut result = MorphometryResult::default();
    for spec in registry.evaluation_order() {
        let outcome = if spec.rule == Rule::Primary {
            match primaries.get(&spec.name) {
                Some((value, provenance)) if value.kind() == spec.kind => {
                    ParamOutcome::Value(value.clone(), *provenance)
                }
                Some((value, _)) => ParamOutcome::Failed(format!(
                    "primary has kind {}, registry declares {}",
                    value.kind(),
                    spec.kind
                )),
                None => ParamOutcome::Failed("primary not provided".to_string()),
            }
        } else {
            evaluate_derived(spec, &result, ctx)
        };
        result.entries.insert(spec.name.clone(), outcome);
    }
    result
}

fn evaluate_derived(
    spec: &super::registry::ParamSpec,
    result: &MorphometryResult,
    ctx: &EvalContext<'_>,
) -> ParamOutcome {
    let mut resolved: Vec<Resolved<'_>> = Vec::with_capacity(spec.inputs.len());
    for input in &spec.inputs {
        match input.as_str() {
            "@segmented" => match ctx.segmented {
                Some(m) => resolved.push(Resolved::Mesh(m)),
                None => return ParamOutcome::Failed("segmented mesh not provided".to_string()),
            },
            "@fitted" => match ctx.fitted {
                Some(m) => resolved.push(Resolved::Mesh(m)),
                None => return ParamOutcome::Failed("fitted mesh not provided".to_string()),
            },
            name => match result.entries.get(name) {
                Some(ParamOutcome::Value(v, _)) => resolved.push(Resolved::Value(v)),
                Some(ParamOutcome::Failed(_)) => {
                    return ParamOutcome::Failed(format!("input '{name}' failed upstream"))
                }
                None => return ParamOutcome::Failed(format!("input '{name}' unavailable")),
            },
        }
    }
    match apply_rule(&spec.name, &spec.rule, &resolved) {
        Ok(value) => ParamOutcome::Value(value, Provenance::Derived),
        Err(e) => ParamOutcome::Failed(e.to_string()),
    }
}

/// Per-label Euclidean distance between computed and reference landmarks,
/// over the shared labels.
pub fn landmark_error(
    computed: &BTreeMap<String, Point3<f64>>,
    reference: &BTreeMap<String, Point3<f64>>,
) -> Result<BTreeMap<String, f64>, MorphometryError> {
    let mut out = BTreeMap::new();
    for (label, p) in computed {
        if let Some(q) = reference.get(label) {
            out.insert(label.clone(), (p - q).norm());
        }
    }
    if out.is_empty() {
        return Err(MorphometryError::NoSharedLabels);
    }
    Ok(out)
}

/// Aggregate statistics of a landmark error distribution, millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Per-label (mean, sd, min, max) over several cases' per-label errors.
pub fn aggregate_landmark_errors(
    per_case: &[BTreeMap<String, f64>],
) -> BTreeMap<String, ErrorStats> {
    let mut buckets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for case in per_case {
        for (label, &d) in case {
            buckets.entry(label.clone()).or_default().push(d);
        }
    }
    buckets
        .into_iter()
        .map(|(label, ds)| {
            let n = ds.len();
            let mean = ds.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (ds.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let min = ds.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = ds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (label, ErrorStats { mean, sd, min, max, n })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::registry::{default_femoral_registry, ParamRegistry, ParamSpec};
    use super::super::ParamKind;
    use super::*;
    use crate::geometry::{Axis, Plane, RigidTransform, Sphere};
    use crate::synth::{generate_bone_at, BoneParams};
    use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_primary(name: &str, p: Point3<f64>) -> (String, (ParamValue, Provenance)) {
        (name.to_string(), (ParamValue::Point(p), Provenance::SsmInherited))
    }

    #[test]
    fn primaries_only_registry_passes_through() {
        let reg = ParamRegistry::new(vec![
            ParamSpec {
                name: "a".into(),
                kind: ParamKind::Point,
                rule: Rule::Primary,
                inputs: vec![],
                weight: 1.0,
            },
            ParamSpec {
                name: "b".into(),
                kind: ParamKind::Point,
                rule: Rule::Primary,
                inputs: vec![],
                weight: 0.3,
            },
        ])
        .unwrap();
        let primaries: BTreeMap<_, _> = [
            point_primary("a", Point3::new(1.0, 2.0, 3.0)),
            point_primary("b", Point3::new(-1.0, 0.0, 4.0)),
        ]
        .into_iter()
        .collect();
        let result = eval_graph(&reg, &primaries, &EvalContext::default());
        assert_eq!(result.entries.len(), 2);
        assert_eq!(result.require_point("a").unwrap(), Point3::new(1.0, 2.0, 3.0));
        assert_eq!(result.require_point("b").unwrap(), Point3::new(-1.0, 0.0, 4.0));
    }

    #[test]
    fn failure_isolates_downstream_but_not_siblings() {
        let mk = |name: &str, rule: Rule, inputs: &[&str], kind: ParamKind| ParamSpec {
            name: name.into(),
            kind,
            rule,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            weight: 1.0,
        };
        let reg = ParamRegistry::new(vec![
            mk("p", Rule::Primary, &[], ParamKind::Point),
            mk("q", Rule::Primary, &[], ParamKind::Point),
            mk("missing", Rule::Primary, &[], ParamKind::Point),
            mk("good mid", Rule::Midpoint, &["p", "q"], ParamKind::Point),
            mk("bad mid", Rule::Midpoint, &["p", "missing"], ParamKind::Point),
            mk("bad chain", Rule::Midpoint, &["bad mid", "q"], ParamKind::Point),
        ])
        .unwrap();
        let primaries: BTreeMap<_, _> = [
            point_primary("p", Point3::new(0.0, 0.0, 0.0)),
            point_primary("q", Point3::new(2.0, 0.0, 0.0)),
        ]
        .into_iter()
        .collect();
        let result = eval_graph(&reg, &primaries, &EvalContext::default());
        assert_eq!(result.require_point("good mid").unwrap(), Point3::new(1.0, 0.0, 0.0));
        assert!(matches!(result.entries["missing"], ParamOutcome::Failed(_)));
        assert!(matches!(result.entries["bad mid"], ParamOutcome::Failed(_)));
        assert!(matches!(result.entries["bad chain"], ParamOutcome::Failed(_)));
    }

    #[test]
    fn adjust_to_mesh_moves_fractionally_along_closest_segment() {
        let mesh = generate_bone_at(&BoneParams::default_femur(), 5.0).unwrap().0;
        let (_, hi) = mesh.aabb();
        let outside = Point3::new(0.0, 0.0, hi.z + 2.0);
        let (d0, closest) = point_to_surface(&outside, &mesh).unwrap();
        assert!(d0 > 1.0);

        let unchanged = adjust_to_mesh(&outside, &mesh, 0.0).unwrap();
        assert_eq!(unchanged, outside);

        let snapped = adjust_to_mesh(&outside, &mesh, 1.0).unwrap();
        assert!((snapped - closest).norm() < 1e-12);

        let half = adjust_to_mesh(&outside, &mesh, 0.5).unwrap();
        let (d_half, _) = point_to_surface(&half, &mesh).unwrap();
        assert!((d_half - 0.5 * d0).abs() < 1e-9);
        // on the segment: collinear with endpoints
        let along = (half - outside).cross(&(closest - outside)).norm();
        assert!(along < 1e-9);
    }

    #[test]
    fn landmark_error_examples() {
        let a: BTreeMap<String, Point3<f64>> = [
            ("x".to_string(), Point3::new(0.0, 0.0, 0.0)),
            ("y".to_string(), Point3::new(1.0, 1.0, 1.0)),
        ]
        .into_iter()
        .collect();
        let same = landmark_error(&a, &a).unwrap();
        assert!(same.values().all(|&d| d == 0.0));

        let mut b = a.clone();
        b.insert("y".to_string(), Point3::new(1.0, 4.0, 1.0));
        let errs = landmark_error(&a, &b).unwrap();
        assert_eq!(errs["x"], 0.0);
        assert!((errs["y"] - 3.0).abs() < 1e-12);

        let stats = aggregate_landmark_errors(&[errs]);
        assert_eq!(stats["y"].mean, 3.0);
        assert_eq!(stats["y"].n, 1);

        let disjoint: BTreeMap<String, Point3<f64>> =
            [("z".to_string(), Point3::origin())].into_iter().collect();
        assert!(matches!(
            landmark_error(&a, &disjoint),
            Err(MorphometryError::NoSharedLabels)
        ));
    }

    fn random_rigid(rng: &mut ChaCha8Rng) -> RigidTransform {
        let rot: Matrix3<f64> = *Rotation3::from_euler_angles(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.0..3.0),
        )
        .matrix();
        let t = Vector3::new(
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
        );
        RigidTransform::new(rot, t, 1.0)
    }

    /// Applying a rigid transform to all inputs must transform point/axis/
    /// plane/sphere outputs accordingly and leave lengths/angles unchanged.
    #[test]
    fn rules_are_rigid_equivariant() {
        let p1 = Point3::new(3.0, -2.0, 7.0);
        let p2 = Point3::new(-4.0, 5.0, 1.0);
        let p3 = Point3::new(2.0, 9.0, -3.0);
        let axis = Axis::through(p1, p2);
        let plane = Plane::new(p3, (p2 - p1).cross(&(p3 - p1)));

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let t = random_rigid(&mut rng);
            let (q1, q2, q3) = (t.apply(&p1), t.apply(&p2), t.apply(&p3));
            let t_axis = axis.transformed(&t);
            let t_plane = plane.transformed(&t);

            let check_point = |rule: &Rule, raw: &[ParamValue], moved: &[ParamValue]| {
                let raw_refs: Vec<Resolved> = raw.iter().map(Resolved::Value).collect();
                let moved_refs: Vec<Resolved> = moved.iter().map(Resolved::Value).collect();
                let a = apply_rule("t", rule, &raw_refs).unwrap();
                let b = apply_rule("t", rule, &moved_refs).unwrap();
                (a, b)
            };

            // midpoint
            let (a, b) = check_point(
                &Rule::Midpoint,
                &[ParamValue::Point(p1), ParamValue::Point(p2)],
                &[ParamValue::Point(q1), ParamValue::Point(q2)],
            );
            match (a, b) {
                (ParamValue::Point(a), ParamValue::Point(b)) => {
                    assert!((t.apply(&a) - b).norm() < 1e-9)
                }
                _ => unreachable!(),
            }

            // axis_through
            let (a, b) = check_point(
                &Rule::AxisThrough,
                &[ParamValue::Point(p1), ParamValue::Point(p2)],
                &[ParamValue::Point(q1), ParamValue::Point(q2)],
            );
            match (a, b) {
                (ParamValue::Axis(a), ParamValue::Axis(b)) => {
                    let ta = a.transformed(&t);
                    assert!((ta.point - b.point).norm() < 1e-9);
                    assert!((ta.direction.into_inner() - b.direction.into_inner()).norm() < 1e-9);
                }
                _ => unreachable!(),
            }

            // plane_from_points: compare via signed distances of probes
            let (a, b) = check_point(
                &Rule::PlaneFromPoints,
                &[ParamValue::Point(p1), ParamValue::Point(p2), ParamValue::Point(p3)],
                &[ParamValue::Point(q1), ParamValue::Point(q2), ParamValue::Point(q3)],
            );
            match (a, b) {
                (ParamValue::Plane(a), ParamValue::Plane(b)) => {
                    let probe = Point3::new(11.0, -7.0, 2.0);
                    let d1 = a.signed_distance(&probe);
                    let d2 = b.signed_distance(&t.apply(&probe));
                    assert!((d1 - d2).abs() < 1e-9);
                }
                _ => unreachable!(),
            }

            // plane_point_normal + offset_plane + project_on_plane
            let (a, b) = check_point(
                &Rule::PlanePointNormal,
                &[ParamValue::Point(p3), ParamValue::Axis(axis.clone())],
                &[ParamValue::Point(q3), ParamValue::Axis(t_axis.clone())],
            );
            let (pl_a, pl_b) = match (a, b) {
                (ParamValue::Plane(a), ParamValue::Plane(b)) => (a, b),
                _ => unreachable!(),
            };
            let (a, b) = check_point(
                &Rule::OffsetPlane { distance: -9.0 },
                &[ParamValue::Plane(pl_a)],
                &[ParamValue::Plane(pl_b)],
            );
            match (a, b) {
                (ParamValue::Plane(a), ParamValue::Plane(b)) => {
                    let probe = Point3::new(-3.0, 8.0, 5.0);
                    assert!(
                        (a.signed_distance(&probe) - b.signed_distance(&t.apply(&probe))).abs()
                            < 1e-9
                    );
                }
                _ => unreachable!(),
            }
            let (a, b) = check_point(
                &Rule::ProjectOnPlane,
                &[ParamValue::Point(p1), ParamValue::Plane(plane.clone())],
                &[ParamValue::Point(q1), ParamValue::Plane(t_plane.clone())],
            );
            match (a, b) {
                (ParamValue::Point(a), ParamValue::Point(b)) => {
                    assert!((t.apply(&a) - b).norm() < 1e-9)
                }
                _ => unreachable!(),
            }

            // distance and angle are invariant
            let (a, b) = check_point(
                &Rule::Distance,
                &[ParamValue::Point(p1), ParamValue::Point(p2)],
                &[ParamValue::Point(q1), ParamValue::Point(q2)],
            );
            match (a, b) {
                (ParamValue::Length(a), ParamValue::Length(b)) => assert!((a - b).abs() < 1e-9),
                _ => unreachable!(),
            }
            let axis2 = Axis::through(p2, p3);
            let (a, b) = check_point(
                &Rule::AngleBetween,
                &[ParamValue::Axis(axis.clone()), ParamValue::Axis(axis2.clone())],
                &[
                    ParamValue::Axis(t_axis.clone()),
                    ParamValue::Axis(axis2.transformed(&t)),
                ],
            );
            match (a, b) {
                (ParamValue::Angle(a), ParamValue::Angle(b)) => assert!((a - b).abs() < 1e-9),
                _ => unreachable!(),
            }

            // sphere coercion: sphere stands in for its center
            let sph = Sphere::new(p1, 24.0);
            let (a, b) = check_point(
                &Rule::Distance,
                &[ParamValue::Sphere(sph), ParamValue::Point(p2)],
                &[ParamValue::Sphere(sph.transformed(&t)), ParamValue::Point(q2)],
            );
            match (a, b) {
                (ParamValue::Length(a), ParamValue::Length(b)) => assert!((a - b).abs() < 1e-9),
                _ => unreachable!(),
            }
        }
    }

    /// Evaluation output must not depend on the record order of the
    /// registry file, only on the dependency structure.
    #[test]
    fn evaluation_is_order_independent() {
        let (mesh, truth) = generate_bone_at(&BoneParams::default_femur(), 4.0).unwrap();
        let reg = default_femoral_registry(9.0);
        let primaries: BTreeMap<_, _> = truth
            .landmarks
            .iter()
            .map(|(k, &p)| (k.clone(), (ParamValue::Point(p), Provenance::SsmInherited)))
            .collect();
        let ctx = EvalContext { fitted: None, segmented: Some(&mesh) };
        let baseline = eval_graph(&reg, &primaries, &ctx);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut specs = reg.specs().to_vec();
            // Fisher-Yates shuffle
            for i in (1..specs.len()).rev() {
                specs.swap(i, rng.gen_range(0..=i));
            }
            let shuffled = ParamRegistry::new(specs).unwrap();
            let result = eval_graph(&shuffled, &primaries, &ctx);
            assert_eq!(result.entries.len(), baseline.entries.len());
            for (name, outcome) in &baseline.entries {
                let other = &result.entries[name];
                match (outcome, other) {
                    (ParamOutcome::Value(a, pa), ParamOutcome::Value(b, pb)) => {
                        assert_eq!(pa, pb);
                        assert_values_identical(name, a, b);
                    }
                    (ParamOutcome::Failed(a), ParamOutcome::Failed(b)) => assert_eq!(a, b),
                    _ => panic!("outcome mismatch for {name}"),
                }
            }
        }
    }

    fn assert_values_identical(name: &str, a: &ParamValue, b: &ParamValue) {
        let ok = match (a, b) {
            (ParamValue::Point(a), ParamValue::Point(b)) => a == b,
            (ParamValue::Axis(a), ParamValue::Axis(b)) => {
                a.point == b.point && a.direction.into_inner() == b.direction.into_inner()
            }
            (ParamValue::Plane(a), ParamValue::Plane(b)) => {
                a.point == b.point && a.normal.into_inner() == b.normal.into_inner()
            }
            (ParamValue::Sphere(a), ParamValue::Sphere(b)) => {
                a.center == b.center && a.radius == b.radius
            }
            (ParamValue::PointSet(a), ParamValue::PointSet(b)) => a == b,
            (ParamValue::Length(a), ParamValue::Length(b)) => a == b,
            (ParamValue::Angle(a), ParamValue::Angle(b)) => a == b,
            _ => false,
        };
        assert!(ok, "value mismatch for {name}: {a:?} vs {b:?}");
    }
}
