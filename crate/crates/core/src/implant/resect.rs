//! Resection planning: the five femoral cut planes and the tibial cut,
//! derived from the morphometric chains.

use nalgebra::{Matrix3, Point3, Unit, Vector3};

use crate::geometry::{Plane, RigidTransform, TriMesh};
use crate::morphometry::{FemoralCore, TibialCore};

use super::ImplantError;

/// Orthonormal design frame anchored on the distal resection plane.
///
/// `w` points proximally (against the mechanical axis), `v` anteriorly and
/// `u = v × w` completes a right-handed basis, so `u` points medially on
/// right knees and laterally on left knees; `medial_sign` records which.
#[derive(Debug, Clone)]
pub struct FemoralCutFrame {
    /// Knee center projected onto the distal resection plane.
    pub origin: Point3<f64>,
    pub u: Unit<Vector3<f64>>,
    pub v: Unit<Vector3<f64>>,
    pub w: Unit<Vector3<f64>>,
    /// +1 when `u` points medially, −1 when laterally.
    pub medial_sign: f64,
}

impl FemoralCutFrame {
    pub fn from_core(core: &FemoralCore) -> Self {
        let w = Unit::new_normalize(-core.mechanical_axis.direction.into_inner());
        let condyle_mid = Point3::from(
            (core.condylar_spheres[0].center.coords + core.condylar_spheres[1].center.coords)
                / 2.0,
        );
        let ant_raw = core.knee_center - condyle_mid;
        let e = core.epicondylar_axis.direction.into_inner();
        let mut v_raw = w.cross(&e);
        if v_raw.dot(&ant_raw) < 0.0 {
            v_raw = -v_raw;
        }
        let v = Unit::new_normalize(v_raw);
        let u = Unit::new_normalize(v.cross(&w));
        let medial = core.condylar_spheres[0].center - core.knee_center;
        let medial_sign = if u.dot(&medial) >= 0.0 { 1.0 } else { -1.0 };
        let origin = core.distal_resection_plane.project(&core.knee_center);
        Self { origin, u, v, w, medial_sign }
    }

    /// Patient coordinates of frame coordinates `(u, v, w)`.
    pub fn from_local(&self, q: &Point3<f64>) -> Point3<f64> {
        self.origin + self.u.into_inner() * q.x + self.v.into_inner() * q.y
            + self.w.into_inner() * q.z
    }

    /// Frame coordinates of a patient-space point.
    pub fn to_local(&self, p: &Point3<f64>) -> Point3<f64> {
        let d = p - self.origin;
        Point3::new(d.dot(&self.u), d.dot(&self.v), d.dot(&self.w))
    }

    /// Rigid transform mapping frame coordinates into patient space.
    pub fn transform(&self) -> RigidTransform {
        let rot = Matrix3::from_columns(&[
            self.u.into_inner(),
            self.v.into_inner(),
            self.w.into_inner(),
        ]);
        RigidTransform::new(rot, self.origin.coords, 1.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResectionConfig {
    /// Dihedral angle between the distal cut and each chamfer, degrees.
    pub chamfer_angle_deg: f64,
    /// In-plane width of each chamfer facet footprint on the distal cut, mm.
    pub chamfer_width: f64,
    /// Depth of bone removed behind the posterior-most condylar point, mm.
    pub posterior_offset: f64,
    /// Height above the distal cut searched for the anterior cortex, mm.
    pub anterior_band: f64,
}

impl Default for ResectionConfig {
    fn default() -> Self {
        Self {
            chamfer_angle_deg: 45.0,
            chamfer_width: 7.5,
            posterior_offset: 9.0,
            anterior_band: 45.0,
        }
    }
}

/// The five femoral cut planes plus the tibial cut. All normals point away
/// from the bone that remains after the cut.
#[derive(Debug, Clone)]
pub struct ResectionSet {
    pub distal: Plane,
    pub anterior: Plane,
    pub posterior: Plane,
    pub chamfer_anterior: Plane,
    pub chamfer_posterior: Plane,
    pub tibial: Plane,
}

impl ResectionSet {
    /// Femoral planes ordered anterior → posterior along the cut profile.
    pub fn femoral_ordered(&self) -> [&Plane; 5] {
        [
            &self.anterior,
            &self.chamfer_anterior,
            &self.distal,
            &self.chamfer_posterior,
            &self.posterior,
        ]
    }
}

/// Derives the resection planes from the femoral and tibial chains and the
/// segmented femur surface.
///
/// The distal plane comes straight from the femoral chain; the posterior
/// plane is parallel to the mechanical axis at a configured offset behind
/// the posterior-most condylar point; the anterior plane is tangent to the
/// anterior cortex; the chamfers bridge their neighbours at the configured
/// angle. The tibial plane is the (sloped) cut plane of the tibial chain.
pub fn compute_resections(
    femoral: &FemoralCore,
    tibial: &TibialCore,
    femur_mesh: &TriMesh,
    cfg: &ResectionConfig,
) -> Result<ResectionSet, ImplantError> {
    if femur_mesh.is_empty() {
        return Err(ImplantError::InvalidGeometry("empty femur mesh".into()));
    }
    let frame = FemoralCutFrame::from_core(femoral);
    let theta = cfg.chamfer_angle_deg.to_radians();
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
        return Err(ImplantError::InvalidGeometry(format!(
            "chamfer angle {} out of (0, 90)",
            cfg.chamfer_angle_deg
        )));
    }

    // near-knee band in frame coordinates
    let mut post_extreme = f64::INFINITY;
    let mut ant_extreme = f64::NEG_INFINITY;
    for p in &femur_mesh.vertices {
        let q = frame.to_local(p);
        if (-5.0..=40.0).contains(&q.z) {
            post_extreme = post_extreme.min(q.y);
        }
        if (0.0..=cfg.anterior_band).contains(&q.z) {
            ant_extreme = ant_extreme.max(q.y);
        }
    }
    if !post_extreme.is_finite() || !ant_extreme.is_finite() {
        return Err(ImplantError::InvalidGeometry(
            "no femur vertices near the distal cut".into(),
        ));
    }

    let a = ant_extreme;
    let p = post_extreme + cfg.posterior_offset;
    if a - p <= 2.0 * cfg.chamfer_width + 5.0 {
        return Err(ImplantError::InvalidGeometry(format!(
            "anterior/posterior cut separation {:.1} mm leaves no room for chamfers",
            a - p
        )));
    }

    let v = frame.v.into_inner();
    let w = frame.w.into_inner();
    let anterior = Plane::new(frame.from_local(&Point3::new(0.0, a, 0.0)), v);
    let posterior = Plane::new(frame.from_local(&Point3::new(0.0, p, 0.0)), -v);
    let chamfer_anterior = Plane::new(
        frame.from_local(&Point3::new(0.0, a - cfg.chamfer_width, 0.0)),
        -w * theta.cos() + v * theta.sin(),
    );
    let chamfer_posterior = Plane::new(
        frame.from_local(&Point3::new(0.0, p + cfg.chamfer_width, 0.0)),
        -w * theta.cos() - v * theta.sin(),
    );

    let set = ResectionSet {
        distal: femoral.distal_resection_plane.clone(),
        anterior,
        posterior,
        chamfer_anterior,
        chamfer_posterior,
        tibial: tibial.resection_plane.clone(),
    };
    for (name, plane) in [
        ("distal", &set.distal),
        ("anterior", &set.anterior),
        ("posterior", &set.posterior),
        ("anterior chamfer", &set.chamfer_anterior),
        ("posterior chamfer", &set.chamfer_posterior),
    ] {
        if !plane_cuts_mesh(plane, femur_mesh) {
            return Err(ImplantError::InvalidGeometry(format!(
                "{name} plane does not intersect the femur"
            )));
        }
    }
    Ok(set)
}

fn plane_cuts_mesh(plane: &Plane, mesh: &TriMesh) -> bool {
    let mut above = false;
    let mut below = false;
    for v in &mesh.vertices {
        let d = plane.signed_distance(v);
        above |= d > 0.0;
        below |= d < 0.0;
        if above && below {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::morphometry::{
        femoral_core_chain, tibial_core_chain, FemoralCoreConfig, TibialCoreConfig,
    };
    use crate::synth::{generate_bone, BoneParams};
    use nalgebra::{Rotation3, Vector3};
    use std::collections::BTreeMap;

    fn cores() -> (FemoralCore, TibialCore, TriMesh) {
        let (femur, ft) = generate_bone(&BoneParams::default_femur()).unwrap();
        let (tibia, tt) = generate_bone(&BoneParams::default_tibia()).unwrap();
        let fc =
            femoral_core_chain(&ft.landmarks, &femur, &FemoralCoreConfig::default()).unwrap();
        let tc = tibial_core_chain(&tt.landmarks, &tibia, &TibialCoreConfig::default()).unwrap();
        (fc, tc, femur)
    }

    fn dihedral_deg(a: &Plane, b: &Plane) -> f64 {
        a.normal.dot(&b.normal).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn chamfer_dihedrals_match_configuration() {
        let (fc, tc, femur) = cores();
        let cfg = ResectionConfig::default();
        let set = compute_resections(&fc, &tc, &femur, &cfg).unwrap();

        // chamfers sit at the configured angle to the distal cut and at the
        // complement to the sagittal cuts
        assert!((dihedral_deg(&set.distal, &set.chamfer_anterior) - 45.0).abs() < 0.1);
        assert!((dihedral_deg(&set.distal, &set.chamfer_posterior) - 45.0).abs() < 0.1);
        assert!((dihedral_deg(&set.chamfer_anterior, &set.anterior) - 45.0).abs() < 0.1);
        assert!((dihedral_deg(&set.chamfer_posterior, &set.posterior) - 45.0).abs() < 0.1);

        // the anterior and posterior planes contain the mechanical axis
        // direction (they are parallel to it)
        let mech = fc.mechanical_axis.direction.into_inner();
        assert!(set.anterior.normal.dot(&mech).abs() < 1e-9);
        assert!(set.posterior.normal.dot(&mech).abs() < 1e-9);
    }

    #[test]
    fn anterior_plane_is_tangent_to_the_cortex() {
        let (fc, tc, femur) = cores();
        let cfg = ResectionConfig::default();
        let set = compute_resections(&fc, &tc, &femur, &cfg).unwrap();

        let frame = FemoralCutFrame::from_core(&fc);
        let mut max_d = f64::NEG_INFINITY;
        for p in &femur.vertices {
            let q = frame.to_local(p);
            if (0.0..=cfg.anterior_band).contains(&q.z) {
                max_d = max_d.max(set.anterior.signed_distance(p));
            }
        }
        // extremal anterior vertex lies on the plane; nothing pokes through
        assert!(max_d.abs() < 0.5, "extremal anterior distance {max_d}");
    }

    #[test]
    fn resections_are_rigid_equivariant() {
        let (femur, ft) = generate_bone(&BoneParams::default_femur()).unwrap();
        let (tibia, tt) = generate_bone(&BoneParams::default_tibia()).unwrap();
        let cfg = ResectionConfig::default();

        let fc =
            femoral_core_chain(&ft.landmarks, &femur, &FemoralCoreConfig::default()).unwrap();
        let tc = tibial_core_chain(&tt.landmarks, &tibia, &TibialCoreConfig::default()).unwrap();
        let set = compute_resections(&fc, &tc, &femur, &cfg).unwrap();

        let rot = Rotation3::from_euler_angles(0.3, -0.6, 1.2);
        let t = RigidTransform::new(rot.into_inner(), Vector3::new(40.0, -15.0, 90.0), 1.0);
        let map =
            |lm: &BTreeMap<String, nalgebra::Point3<f64>>| -> BTreeMap<String, nalgebra::Point3<f64>> {
                lm.iter().map(|(k, p)| (k.clone(), t.apply(p))).collect()
            };
        let femur_t = femur.transformed(&t);
        let tibia_t = tibia.transformed(&t);
        let fc_t = femoral_core_chain(&map(&ft.landmarks), &femur_t, &FemoralCoreConfig::default())
            .unwrap();
        let tc_t = tibial_core_chain(&map(&tt.landmarks), &tibia_t, &TibialCoreConfig::default())
            .unwrap();
        let set_t = compute_resections(&fc_t, &tc_t, &femur_t, &cfg).unwrap();

        for (orig, moved) in [
            (&set.distal, &set_t.distal),
            (&set.anterior, &set_t.anterior),
            (&set.posterior, &set_t.posterior),
            (&set.chamfer_anterior, &set_t.chamfer_anterior),
            (&set.chamfer_posterior, &set_t.chamfer_posterior),
            (&set.tibial, &set_t.tibial),
        ] {
            let expected = orig.transformed(&t);
            assert!((expected.normal.dot(&moved.normal) - 1.0).abs() < 1e-6);
            assert!(moved.signed_distance(&expected.point).abs() < 1e-6);
        }
    }
}
