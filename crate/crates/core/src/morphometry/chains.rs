//! Core derivation chains for the femur and tibia, built on the shipped
//! registries.

use std::collections::BTreeMap;

use nalgebra::{Point3, Unit, Vector3};

use crate::geometry::{Axis, Plane, Sphere, TriMesh};

use super::eval::{eval_graph, EvalContext};
use super::registry::{default_femoral_registry, default_tibial_registry};
use super::{MorphometryError, MorphometryResult, ParamValue, Provenance};

#[derive(Debug, Clone, Copy)]
pub struct FemoralCoreConfig {
    /// Cut height above the most distal condylar point, millimetres.
    pub distal_resection_depth: f64,
}

impl Default for FemoralCoreConfig {
    fn default() -> Self {
        Self { distal_resection_depth: 9.0 }
    }
}

/// Key femoral quantities pulled out of the evaluated registry.
#[derive(Debug, Clone)]
pub struct FemoralCore {
    pub knee_center: Point3<f64>,
    pub head_center: Point3<f64>,
    pub head_radius: f64,
    pub mechanical_axis: Axis,
    pub anatomical_axis: Axis,
    pub epicondylar_axis: Axis,
    pub posterior_condylar_axis: Axis,
    /// Fitted condylar spheres, `[medial, lateral]`.
    pub condylar_spheres: [Sphere; 2],
    pub ap_size: f64,
    pub ap_size_medial: f64,
    pub ap_size_lateral: f64,
    pub epicondylar_width: f64,
    pub distal_point: Point3<f64>,
    /// Normal points distally (along the mechanical axis direction).
    pub distal_resection_plane: Plane,
    /// Full evaluation, including intermediate and failed entries.
    pub result: MorphometryResult,
}

/// Evaluates the femoral registry on the given primary landmarks and
/// segmented surface and extracts the core quantities.
pub fn femoral_core_chain(
    primaries: &BTreeMap<String, Point3<f64>>,
    segmented: &TriMesh,
    cfg: &FemoralCoreConfig,
) -> Result<FemoralCore, MorphometryError> {
    let registry = default_femoral_registry(cfg.distal_resection_depth);
    let wrapped = wrap_points(primaries);
    let ctx = EvalContext { fitted: None, segmented: Some(segmented) };
    let result = eval_graph(&registry, &wrapped, &ctx);

    let head = result.require_sphere("Femoral Head Sphere")?;
    Ok(FemoralCore {
        knee_center: result.require_point("Knee Center")?,
        head_center: head.center,
        head_radius: head.radius,
        mechanical_axis: result.require_axis("Mechanical Axis")?,
        anatomical_axis: result.require_axis("Anatomical Axis")?,
        epicondylar_axis: result.require_axis("Epicondylar Axis")?,
        posterior_condylar_axis: result.require_axis("Posterior Condylar Axis")?,
        condylar_spheres: [
            result.require_sphere("Medial Condyle Sphere")?,
            result.require_sphere("Lateral Condyle Sphere")?,
        ],
        ap_size: result.require_scalar("AP Size")?,
        ap_size_medial: result.require_scalar("AP Size Medial")?,
        ap_size_lateral: result.require_scalar("AP Size Lateral")?,
        epicondylar_width: result.require_scalar("Epicondylar Width")?,
        distal_point: result.require_point("Distal Point")?,
        distal_resection_plane: result.require_plane("Distal Resection Plane")?,
        result,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TibialCoreConfig {
    /// Cut depth below the plateau high point, millimetres.
    pub resection_depth: f64,
    /// Posterior slope of the cut, degrees (rotation about the
    /// medio-lateral axis; the plane drops posteriorly).
    pub posterior_slope_deg: f64,
}

impl Default for TibialCoreConfig {
    fn default() -> Self {
        Self { resection_depth: 8.0, posterior_slope_deg: 3.0 }
    }
}

/// Key tibial quantities: mechanical axis, the sloped resection plane and
/// an orthonormal contour frame on it.
#[derive(Debug, Clone)]
pub struct TibialCore {
    pub knee_center: Point3<f64>,
    pub plafond_center: Point3<f64>,
    pub mechanical_axis: Axis,
    /// Normal points proximally; includes the posterior slope.
    pub resection_plane: Plane,
    /// Origin of the plateau contour frame: plateau center projected onto
    /// the resection plane.
    pub contour_origin: Point3<f64>,
    /// Medio-lateral in-plane direction.
    pub ml_direction: Unit<Vector3<f64>>,
    /// Anterior in-plane direction.
    pub ap_direction: Unit<Vector3<f64>>,
    pub result: MorphometryResult,
}

/// Evaluates the tibial registry and applies the posterior slope to the
/// cut reference plane.
pub fn tibial_core_chain(
    primaries: &BTreeMap<String, Point3<f64>>,
    segmented: &TriMesh,
    cfg: &TibialCoreConfig,
) -> Result<TibialCore, MorphometryError> {
    let registry = default_tibial_registry(cfg.resection_depth);
    let wrapped = wrap_points(primaries);
    let ctx = EvalContext { fitted: None, segmented: Some(segmented) };
    let result = eval_graph(&registry, &wrapped, &ctx);

    let mechanical_axis = result.require_axis("Tibial Mechanical Axis")?;
    let reference = result.require_plane("Tibial Cut Reference Plane")?;
    let plateau_center = result.require_point("Plateau Center")?;
    let ml_raw = result.require_axis("Plateau Axis")?.direction.into_inner();
    let tubercle = result.require_point("Tibial Tubercle")?;

    // orthonormal helper frame about the proximal (unsloped) normal
    let proximal = reference.normal.into_inner();
    let ml0 = Unit::new_normalize(ml_raw - proximal * ml_raw.dot(&proximal));
    let ant_raw = tubercle - plateau_center;
    let mut ant0 = ant_raw - proximal * ant_raw.dot(&proximal);
    ant0 -= ml0.into_inner() * ant0.dot(&ml0);
    let ant0 = Unit::new_normalize(ant0);

    // posterior slope: tilt the normal about the medio-lateral axis so the
    // plane drops posteriorly. The tilted plane pivots at the plateau-center
    // station of the reference cut, not at the high point itself, so the cut
    // does not depend on which plateau dome happens to sit highest.
    let slope = cfg.posterior_slope_deg.to_radians();
    let normal =
        Unit::new_normalize(proximal * slope.cos() - ant0.into_inner() * slope.sin());
    let resection_plane = Plane { point: reference.project(&plateau_center), normal };

    // contour frame lies in the sloped plane
    let n = normal.into_inner();
    let ml = Unit::new_normalize(ml_raw - n * ml_raw.dot(&n));
    let mut ap = n.cross(&ml);
    if ap.dot(&ant0) < 0.0 {
        ap = -ap;
    }
    let anterior = Unit::new_normalize(ap);
    let contour_origin = resection_plane.project(&plateau_center);
    Ok(TibialCore {
        knee_center: result.require_point("Tibial Knee Center")?,
        plafond_center: result.require_point("Plafond Center")?,
        mechanical_axis,
        resection_plane,
        contour_origin,
        ml_direction: ml,
        ap_direction: anterior,
        result,
    })
}

fn wrap_points(
    points: &BTreeMap<String, Point3<f64>>,
) -> BTreeMap<String, (ParamValue, Provenance)> {
    points
        .iter()
        .map(|(k, &p)| (k.clone(), (ParamValue::Point(p), Provenance::SsmInherited)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle_deg;
    use crate::synth::{generate_bone, BoneParams};

    #[test]
    fn femoral_chain_on_synthetic_bone() {
        let params = BoneParams::default_femur();
        let (mesh, truth) = generate_bone(&params).unwrap();
        let cfg = FemoralCoreConfig::default();
        let core = femoral_core_chain(&truth.landmarks, &mesh, &cfg).unwrap();

        // knee center is defined by the same rule the generator uses
        assert!((core.knee_center - truth.knee_center).norm() < 1e-9);

        // mechanical axis within 1° of the generative axis
        let angle = axis_angle_deg(&core.mechanical_axis, &truth.mechanical_axis);
        assert!(angle < 1.0, "mechanical axis off by {angle}°");

        // condylar sphere radii within 0.5 mm of the generative spheres
        for (fitted, truth_sphere) in core.condylar_spheres.iter().zip(&truth.condyle_spheres) {
            assert!(
                (fitted.radius - truth_sphere.radius).abs() < 0.5,
                "radius {} vs {}",
                fitted.radius,
                truth_sphere.radius
            );
            assert!((fitted.center - truth_sphere.center).norm() < 0.5);
        }

        // head sphere
        assert!((core.head_radius - params.head_radius).abs() < 0.5);

        // resection plane: 9 mm from the most distal point, normal along
        // the mechanical axis
        let sd = core.distal_resection_plane.signed_distance(&core.distal_point);
        assert!((sd - cfg.distal_resection_depth).abs() < 1e-9, "depth {sd}");
        let n_axis = Axis::new(Point3::origin(), core.distal_resection_plane.normal.into_inner());
        assert!(axis_angle_deg(&n_axis, &core.mechanical_axis) < 1e-9);

        // plausible scalar outputs
        assert!(core.ap_size_medial > 35.0 && core.ap_size_medial < 90.0);
        assert!(core.epicondylar_width > 60.0 && core.epicondylar_width < 120.0);
    }

    #[test]
    fn tibial_chain_slope_and_depth() {
        let params = BoneParams::default_tibia();
        let (mesh, truth) = generate_bone(&params).unwrap();

        // slope 0: normal parallel to the mechanical axis
        let flat = TibialCoreConfig { posterior_slope_deg: 0.0, ..TibialCoreConfig::default() };
        let core = tibial_core_chain(&truth.landmarks, &mesh, &flat).unwrap();
        let n_axis = Axis::new(Point3::origin(), core.resection_plane.normal.into_inner());
        assert!(axis_angle_deg(&n_axis, &core.mechanical_axis) < 1e-9);
        let angle = axis_angle_deg(&core.mechanical_axis, &truth.mechanical_axis);
        assert!(angle < 1.0, "mechanical axis off by {angle}°");

        // cut depth below the plateau high point
        let high = core.result.require_point("Plateau High Point").unwrap();
        let sd = core.resection_plane.signed_distance(&high);
        assert!((sd - flat.resection_depth).abs() < 1e-9, "depth {sd}");

        // slope 3°: plane normal tilts by exactly the slope, dropping
        // posteriorly
        let sloped = TibialCoreConfig::default();
        let core3 = tibial_core_chain(&truth.landmarks, &mesh, &sloped).unwrap();
        let n3 = Axis::new(Point3::origin(), core3.resection_plane.normal.into_inner());
        let tilt = axis_angle_deg(&n3, &core3.mechanical_axis);
        assert!((tilt - 3.0).abs() < 0.01, "tilt {tilt}");
        // a posterior point at equal height along the mechanical axis sits
        // higher above the sloped plane than its anterior mirror
        let mech = core3.mechanical_axis.direction.into_inner();
        let ap = core3.ap_direction.into_inner();
        let level = (ap - mech * ap.dot(&mech)).normalize();
        let ahead = core3.contour_origin + 20.0 * level;
        let behind = core3.contour_origin - 20.0 * level;
        assert!(
            core3.resection_plane.signed_distance(&behind)
                > core3.resection_plane.signed_distance(&ahead),
            "posterior side should sit above the sloped plane"
        );

        // contour frame is orthonormal
        assert!(core3.ml_direction.dot(&core3.ap_direction).abs() < 1e-9);
        assert!(core3.ml_direction.dot(&core3.resection_plane.normal).abs() < 1e-9);
        assert!(core3.ap_direction.dot(&core3.resection_plane.normal).abs() < 1e-9);
    }

    #[test]
    fn missing_primary_surfaces_as_rule_failure() {
        let params = BoneParams::default_femur();
        let (mesh, truth) = generate_bone(&params).unwrap();
        let mut landmarks = truth.landmarks.clone();
        landmarks.remove("Femoral Head Apex");
        match femoral_core_chain(&landmarks, &mesh, &FemoralCoreConfig::default()) {
            Err(MorphometryError::RuleFailed { .. }) => {}
            other => panic!("expected rule failure, got {other:?}"),
        }
    }
}
