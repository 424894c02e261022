//! Femoral component design: per-condyle pivot spheres sized from AP
//! extent, an anterior flange following the premorbid surface, chamfer
//! bridging, rollback caps, notch cut and fixation pins.

use nalgebra::{Point3, Unit, Vector3};

use crate::geometry::{count_self_intersections, Plane, Sphere, TriMesh};
use crate::morphometry::FemoralCore;

use super::resect::{FemoralCutFrame, ResectionSet};
use super::solid::{mesh_sdf, sd_capsule, MeshSdf, SnapSurface};
use super::{ComponentKind, ImplantComponent, ImplantError};

/// Affine map from AP size (mm) to articular sphere radius (mm).
#[derive(Debug, Clone, Copy)]
pub struct RadiusFn {
    pub intercept: f64,
    pub slope: f64,
}

impl RadiusFn {
    pub fn eval(&self, ap: f64) -> f64 {
        self.intercept + self.slope * ap
    }

    /// Affine, so positivity over an interval reduces to the endpoints.
    pub fn positive_over(&self, lo: f64, hi: f64) -> bool {
        self.eval(lo) > 0.0 && self.eval(hi) > 0.0
    }
}

/// AP-size domain (mm) over which the radius maps must stay positive.
pub const AP_DOMAIN: (f64, f64) = (35.0, 80.0);

#[derive(Debug, Clone)]
pub struct FemoralDesignParams {
    /// Radius maps for the two pivot spheres. Defaults are placeholders
    /// calibrated on the synthetic population, not clinical regressions.
    pub medial_radius_fn: RadiusFn,
    pub lateral_radius_fn: RadiusFn,
    /// Fraction of the sphere radius above the sphere center at which the
    /// posterior condyle is capped for deep flexion rollback.
    pub rollback_arc_fraction: f64,
    /// Opening angle of the trochlear groove carved into the flange.
    pub sulcus_angle_limit_deg: f64,
    /// Metal thickness at the distal facets, `[medial, lateral]` (mm).
    pub facet_heights: [f64; 2],
    /// Outward offset of the flange surface from the premorbid bone (mm).
    pub flange_offset: f64,
    /// Flange extent above the distal cut plane (mm).
    pub flange_height: f64,
    /// Depth of the trochlear groove below the flange front (mm).
    pub groove_depth: f64,
    /// Width of the intercondylar notch cut (mm).
    pub notch_width: f64,
    pub pin_radius: f64,
    pub pin_length: f64,
    /// Medio-lateral distance between the two fixation pins (mm).
    pub pin_spacing: f64,
    /// Node spacing of the extraction grid (mm).
    pub mesh_spacing: f64,
}

impl Default for FemoralDesignParams {
    fn default() -> Self {
        Self {
            medial_radius_fn: RadiusFn { intercept: 2.0, slope: 0.5 },
            lateral_radius_fn: RadiusFn { intercept: 2.0, slope: 0.5 },
            rollback_arc_fraction: 0.5,
            sulcus_angle_limit_deg: 145.0,
            facet_heights: [9.0, 9.0],
            flange_offset: 4.0,
            flange_height: 30.0,
            groove_depth: 1.5,
            notch_width: 18.0,
            pin_radius: 3.0,
            pin_length: 10.0,
            pin_spacing: 40.0,
            mesh_spacing: 0.6,
        }
    }
}

/// Builds the femoral component.
///
/// The articular posterior/distal surfaces are the two pivot spheres; the
/// anterior flange follows the premorbid (fitted shape model) surface at a
/// configured offset; the chamfer and distal regions are bridged by an
/// offset of the cut staircase; the inner surface is the staircase itself.
/// The mesh lives in the cut frame ([`FemoralCutFrame`]); `frame` maps it
/// into patient space.
pub fn design_femoral(
    core: &FemoralCore,
    premorbid: &TriMesh,
    resections: &ResectionSet,
    params: &FemoralDesignParams,
) -> Result<ImplantComponent, ImplantError> {
    for (name, rf) in [
        ("medial", &params.medial_radius_fn),
        ("lateral", &params.lateral_radius_fn),
    ] {
        if !rf.positive_over(AP_DOMAIN.0, AP_DOMAIN.1) {
            return Err(ImplantError::InvalidGeometry(format!(
                "{name} radius function not positive over the AP domain"
            )));
        }
    }
    for (name, ap) in [("medial", core.ap_size_medial), ("lateral", core.ap_size_lateral)] {
        if !(AP_DOMAIN.0..=AP_DOMAIN.1).contains(&ap) {
            return Err(ImplantError::InvalidGeometry(format!(
                "{name} AP size {ap:.1} outside the radius-map domain"
            )));
        }
    }
    if !(0.05..=0.95).contains(&params.rollback_arc_fraction) {
        return Err(ImplantError::InvalidGeometry(
            "rollback arc fraction outside (0.05, 0.95)".into(),
        ));
    }

    let frame = FemoralCutFrame::from_core(core);
    let into_local = frame.transform().inverse();

    // cut planes in the design frame
    let distal = resections.distal.transformed(&into_local);
    let anterior = resections.anterior.transformed(&into_local);
    let posterior = resections.posterior.transformed(&into_local);
    let chamfer_a = resections.chamfer_anterior.transformed(&into_local);
    let chamfer_p = resections.chamfer_posterior.transformed(&into_local);
    let planes = [
        distal.clone(),
        anterior.clone(),
        posterior.clone(),
        chamfer_a.clone(),
        chamfer_p.clone(),
    ];

    let a = anterior.point.y; // anterior cut station (local v)
    let p = posterior.point.y; // posterior cut station
    // chamfer footprint width on the distal plane
    let c_w = a - chamfer_a.point.y;

    let radii = [
        params.medial_radius_fn.eval(core.ap_size_medial),
        params.lateral_radius_fn.eval(core.ap_size_lateral),
    ];
    let heights = params.facet_heights;
    let mut spheres = [Sphere::new(Point3::origin(), 1.0); 2];
    let mut caps = [0.0f64; 2];
    for k in 0..2 {
        let (r, t) = (radii[k], heights[k]);
        if r - t < 2.0 {
            return Err(ImplantError::InvalidGeometry(format!(
                "sphere radius {r:.1} too small for facet height {t:.1}"
            )));
        }
        let u_c = into_local.apply(&core.condylar_spheres[k].center).x;
        spheres[k] = Sphere::new(Point3::new(u_c, p + r - t, r - t), r);
        caps[k] = (r - t) + params.rollback_arc_fraction * r;
    }
    let u_mid = (spheres[0].center.x + spheres[1].center.x) / 2.0;
    let u_half = (spheres[0].center.x - u_mid).abs().max((spheres[1].center.x - u_mid).abs())
        + radii[0].max(radii[1]);

    let premorbid_local = premorbid.transformed(&into_local);
    let flange_sdf = MeshSdf::new(&premorbid_local);
    let t_bridge = heights[0].min(heights[1]);

    let v_notch = (spheres[0].center.y + spheres[1].center.y) / 2.0
        + 0.3 * radii[0].min(radii[1]);
    let groove_k = ((180.0 - params.sulcus_angle_limit_deg) / 2.0).to_radians().tan();
    let groove_apex = a + params.flange_offset - params.groove_depth;
    let groove_scale = (1.0 + groove_k * groove_k).sqrt();

    let flange_back = a - c_w - 5.0;
    let flange_height = params.flange_height;
    let flange_offset = params.flange_offset;
    let bridge_back = p + c_w;
    // the bridge shell must span the full anterior-chamfer facet: beyond the
    // flange the articular spheres clear that cut by under 3 mm on their own
    let bridge_front = a;
    let cap_max = caps[0].max(caps[1]);
    let pin_u = [u_mid - params.pin_spacing / 2.0, u_mid + params.pin_spacing / 2.0];
    let (pin_r, pin_len) = (params.pin_radius, params.pin_length);
    let notch_half = params.notch_width / 2.0;

    // the flange is kept narrower than the condylar span: toward the bone
    // silhouette the offset premorbid surface and the anterior cut approach
    // each other in a feather wedge too thin to manufacture
    let flange_half = (spheres[0].center.x - u_mid)
        .abs()
        .max((spheres[1].center.x - u_mid).abs())
        + 4.0;
    let sdf = move |x: &Point3<f64>| -> f64 {
        let (u, v, w) = (x.x, x.y, x.z);
        let u_slab = (u - u_mid).abs() - u_half;

        // outer articular/flange/bridge union
        let ball = |k: usize| spheres[k].signed_distance(x).max(w - caps[k]);
        let flange = (flange_sdf.signed(x) - flange_offset)
            .max(flange_back - v)
            .max(w - flange_height)
            .max(-w - t_bridge)
            .max((u - u_mid).abs() - flange_half);
        let staircase = planes
            .iter()
            .map(|pl| pl.signed_distance(x))
            .fold(f64::NEG_INFINITY, f64::max);
        let bridge = (staircase - t_bridge)
            .max(bridge_back - v)
            .max(v - bridge_front)
            .max(w - 8.0)
            .max(u_slab);
        // flat shield over the anterior cut: where the anterior cortex
        // recedes behind the tangent cut plane, the premorbid offset alone
        // pinches out; the slab keeps the shield a full offset thick
        let ant_sd = anterior.signed_distance(x);
        let slab = (ant_sd - flange_offset)
            .max(-ant_sd)
            .max(4.5 - w)
            .max(w - flange_height)
            .max((u - u_mid).abs() - flange_half);
        let outer = ball(0).min(ball(1)).min(flange).min(bridge).min(slab);

        // carve the bone-side staircase
        let mut d = outer.max(-staircase);

        // trochlear groove, kept clear of the distal cut rim: remove the
        // V-prism beyond the groove apex, above w = 2
        let groove = ((v - groove_apex - groove_k * (u - u_mid).abs()) / groove_scale)
            .min(w - 2.0);
        d = d.max(groove);

        // intercondylar notch
        let notch = ((u - u_mid).abs() - notch_half).max(v - v_notch);
        d = d.max(-notch);

        // fixation pins
        for &pu in &pin_u {
            let a0 = Point3::new(pu, 0.0, -2.0);
            let b0 = Point3::new(pu, 0.0, pin_len);
            d = d.min(sd_capsule(x, &a0, &b0, pin_r));
        }
        d
    };

    // grid bounds in the design frame
    let t_max = heights[0].max(heights[1]);
    let lo = Point3::new(
        u_mid - u_half - 2.0,
        p - t_max - 2.0,
        -t_max - 2.0,
    );
    let hi = Point3::new(
        u_mid + u_half + 2.0,
        a + flange_offset + 2.0,
        flange_height.max(cap_max) + 2.0,
    );

    let mut snaps: Vec<SnapSurface> = Vec::new();
    for s in spheres {
        snaps.push(SnapSurface::Sphere(s));
    }
    for pl in &planes {
        snaps.push(SnapSurface::Plane(pl.clone()));
    }
    for k in 0..2 {
        snaps.push(SnapSurface::Plane(Plane {
            point: Point3::new(spheres[k].center.x, spheres[k].center.y, caps[k]),
            normal: Unit::new_normalize(Vector3::z()),
        }));
    }

    let mesh = mesh_sdf(&sdf, lo, hi, params.mesh_spacing, &snaps)?;
    if !mesh.is_watertight() {
        return Err(ImplantError::InvalidGeometry(
            "femoral component surface is not watertight".into(),
        ));
    }
    let selfx = count_self_intersections(&mesh);
    if selfx > 0 {
        return Err(ImplantError::InvalidGeometry(format!(
            "femoral component has {selfx} self-intersecting triangle pairs"
        )));
    }
    Ok(ImplantComponent { kind: ComponentKind::Femoral, mesh, frame: frame.transform() })
}

/// Designed articular spheres in patient coordinates, `[medial, lateral]`,
/// recomputed from the same inputs as [`design_femoral`].
pub fn articular_spheres(
    core: &FemoralCore,
    resections: &ResectionSet,
    params: &FemoralDesignParams,
) -> [Sphere; 2] {
    let frame = FemoralCutFrame::from_core(core);
    let into_local = frame.transform().inverse();
    let p = resections.posterior.transformed(&into_local).point.y;
    let radii = [
        params.medial_radius_fn.eval(core.ap_size_medial),
        params.lateral_radius_fn.eval(core.ap_size_lateral),
    ];
    let mut out = [Sphere::new(Point3::origin(), 1.0); 2];
    for k in 0..2 {
        let (r, t) = (radii[k], params.facet_heights[k]);
        let u_c = into_local.apply(&core.condylar_spheres[k].center).x;
        let local = Point3::new(u_c, p + r - t, r - t);
        out[k] = Sphere::new(frame.from_local(&local), r);
    }
    out
}
