//! Tibial baseplate and polyethylene insert design.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{Matrix3, Point2, Point3, Unit, Vector2, Vector3};

use crate::geometry::{
    count_self_intersections, fit_sphere, Plane, RigidTransform, Sphere, TriMesh,
};
use crate::morphometry::{FemoralCore, TibialCore};

use super::contour::{section_loops, Polygon2};
use super::resect::FemoralCutFrame;
use super::solid::{mesh_sdf, sd_box, sd_capsule, SnapSurface};
use super::{ComponentKind, ImplantComponent, ImplantError};

#[derive(Debug, Clone, Copy)]
pub struct TibialDesignParams {
    /// Inward offset of the baseplate contour from the resected-bone
    /// contour (mm).
    pub rim_margin: f64,
    /// Baseplate thickness above the cut (mm).
    pub plate_thickness: f64,
    /// Fraction of the AP extent replaced by the posterior straight cut.
    pub posterior_cut_fraction: f64,
    /// Keel length = intercept + slope × plateau ML width (mm).
    pub keel_length_intercept: f64,
    pub keel_length_slope: f64,
    pub keel_radius: f64,
    /// Vane half-length = slope × plateau ML width (mm).
    pub vane_half_length_slope: f64,
    pub vane_thickness: f64,
    /// How far the keel entry point is shifted from the plateau centroid
    /// toward the diaphysis centroid (fraction).
    pub keel_shift_fraction: f64,
    /// Node spacing of the extraction grid (mm).
    pub mesh_spacing: f64,
}

impl Default for TibialDesignParams {
    fn default() -> Self {
        Self {
            rim_margin: 0.5,
            plate_thickness: 4.0,
            posterior_cut_fraction: 0.12,
            keel_length_intercept: 5.0,
            keel_length_slope: 0.45,
            keel_radius: 6.0,
            vane_half_length_slope: 0.14,
            vane_thickness: 3.0,
            keel_shift_fraction: 0.35,
            mesh_spacing: 0.4,
        }
    }
}

/// Design frame of the tibial component: x medio-lateral, y anterior,
/// z along the (sloped) cut normal, origin at the plateau contour origin.
fn tibial_frame(core: &TibialCore) -> RigidTransform {
    let rot = Matrix3::from_columns(&[
        core.ml_direction.into_inner(),
        core.ap_direction.into_inner(),
        core.resection_plane.normal.into_inner(),
    ]);
    RigidTransform::new(rot, core.contour_origin.coords, 1.0)
}

/// Extracts the resected-bone cross-section contour in the design frame.
fn resection_contour(
    core: &TibialCore,
    segmented: &TriMesh,
) -> Result<Polygon2, ImplantError> {
    let loops = section_loops(segmented, &core.resection_plane);
    let e1 = core.ml_direction.into_inner();
    let e2 = core.ap_direction.into_inner();
    let origin = core.contour_origin;
    let mut best: Option<Polygon2> = None;
    for lp in loops {
        let pts: Vec<Point2<f64>> = lp
            .iter()
            .map(|p| Point2::new((p - origin).dot(&e1), (p - origin).dot(&e2)))
            .collect();
        if pts.len() < 3 {
            continue;
        }
        let poly = Polygon2 { points: pts };
        if best.as_ref().map_or(true, |b| poly.perimeter() > b.perimeter()) {
            best = Some(poly);
        }
    }
    best.map(|p| p.canonical()).ok_or(ImplantError::NoIntersection)
}

/// The baseplate footprint: bone contour offset inward by the rim margin
/// with the posterior arc replaced by a straight cut. Also returns the
/// posterior cut station (design-frame y).
fn baseplate_contour(
    bone: &Polygon2,
    params: &TibialDesignParams,
) -> Result<(Polygon2, f64), ImplantError> {
    let inner = bone.offset(-params.rim_margin);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &inner.points {
        y_min = y_min.min(p.y);
        y_max = y_max.max(p.y);
    }
    let cut_y = y_min + params.posterior_cut_fraction * (y_max - y_min);
    let clipped = inner.clip_half_plane(Point2::new(0.0, cut_y), Vector2::new(0.0, 1.0));
    if clipped.points.len() < 3 || clipped.signed_area().abs() < 100.0 {
        return Err(ImplantError::InvalidGeometry(
            "baseplate contour degenerate after the posterior cut".into(),
        ));
    }
    Ok((clipped.canonical(), cut_y))
}

/// Builds the tibial baseplate: an extrusion of the rim-offset resection
/// contour, plus a keel along the tibial mechanical axis with two fixation
/// vanes, entered toward the diaphysis centroid.
pub fn design_tibial(
    core: &TibialCore,
    segmented: &TriMesh,
    params: &TibialDesignParams,
) -> Result<ImplantComponent, ImplantError> {
    let frame = tibial_frame(core);
    let into_local = frame.inverse();
    let bone_poly = resection_contour(core, segmented)?;
    let (plate_poly, _cut_y) = baseplate_contour(&bone_poly, params)?;
    // resample at the grid spacing: a coarser step clips the sharply curved
    // anterior corners and costs fit accuracy against the bone contour
    let plate_poly = plate_poly.resample(params.mesh_spacing);

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &plate_poly.points {
        x_min = x_min.min(p.x);
        x_max = x_max.max(p.x);
        y_min = y_min.min(p.y);
        y_max = y_max.max(p.y);
    }
    let ml_width = x_max - x_min;
    let keel_len = params.keel_length_intercept + params.keel_length_slope * ml_width;
    let vane_half = params.vane_half_length_slope * ml_width;

    // keel entry: plateau centroid shifted toward the diaphysis centroid
    let centroid = plate_poly.centroid();
    let mut diaph = Vector3::zeros();
    let mut n_diaph = 0usize;
    for v in &segmented.vertices {
        let q = into_local.apply(v);
        if (-80.0..=-30.0).contains(&q.z) {
            diaph += q.coords;
            n_diaph += 1;
        }
    }
    let diaph_xy = if n_diaph > 0 {
        let d = diaph / n_diaph as f64;
        Point2::new(d.x, d.y)
    } else {
        centroid
    };
    let entry = centroid + (diaph_xy - centroid) * params.keel_shift_fraction;

    // keel runs along the mechanical axis (distal direction)
    let mech_local = into_local
        .apply_vector(&core.mechanical_axis.direction.into_inner())
        .normalize();
    let t_plate = params.plate_thickness;
    let p0 = Point3::new(entry.x, entry.y, t_plate / 2.0);
    let p1 = p0 + mech_local * (keel_len + t_plate / 2.0);
    let keel_r = params.keel_radius;

    // vane frame around the keel axis
    let k_axis = mech_local;
    let ml3 = Vector3::x();
    let m_axis = (ml3 - k_axis * ml3.dot(&k_axis)).normalize();
    let a_axis = k_axis.cross(&m_axis);
    let vane_center = Point3::from(p0.coords + k_axis.scale(0.45 * keel_len));
    let vane_axes_ml = [m_axis, a_axis, k_axis];
    let vane_axes_ap = [a_axis, m_axis, k_axis];
    let vane_half_ext = [vane_half, params.vane_thickness / 2.0, 0.35 * keel_len];

    let poly = plate_poly.clone();
    let cache: RefCell<HashMap<(u64, u64), f64>> = RefCell::new(HashMap::new());
    let sdf = move |x: &Point3<f64>| -> f64 {
        let key = (x.x.to_bits(), x.y.to_bits());
        let d2 = *cache
            .borrow_mut()
            .entry(key)
            .or_insert_with(|| poly.signed_distance(&Point2::new(x.x, x.y)));
        let plate = d2.max(-x.z).max(x.z - t_plate);
        // clamp the fixation features to the plate top so the keel's upper
        // cap does not poke through the articular face
        let below_top = x.z - t_plate;
        let keel = sd_capsule(x, &p0, &p1, keel_r).max(below_top);
        let v1 = sd_box(x, &vane_center, &vane_axes_ml, &vane_half_ext).max(below_top);
        let v2 = sd_box(x, &vane_center, &vane_axes_ap, &vane_half_ext).max(below_top);
        plate.min(keel).min(v1).min(v2)
    };

    let lo = Point3::new(x_min - 2.0, y_min - 2.0, -(keel_len + keel_r + 4.0));
    let hi = Point3::new(x_max + 2.0, y_max + 2.0, t_plate + 2.0);
    let snaps = vec![
        SnapSurface::Plane(Plane {
            point: Point3::new(0.0, 0.0, t_plate),
            normal: Unit::new_normalize(Vector3::z()),
        }),
        SnapSurface::Plane(Plane {
            point: Point3::origin(),
            normal: Unit::new_normalize(-Vector3::z()),
        }),
        SnapSurface::Wall(plate_poly),
    ];
    let mesh = mesh_sdf(&sdf, lo, hi, params.mesh_spacing, &snaps)?;
    if !mesh.is_watertight() {
        return Err(ImplantError::InvalidGeometry(
            "tibial baseplate surface is not watertight".into(),
        ));
    }
    let selfx = count_self_intersections(&mesh);
    if selfx > 0 {
        return Err(ImplantError::InvalidGeometry(format!(
            "tibial baseplate has {selfx} self-intersecting triangle pairs"
        )));
    }
    Ok(ImplantComponent { kind: ComponentKind::TibialBaseplate, mesh, frame })
}

#[derive(Debug, Clone, Copy)]
pub struct InsertParams {
    /// Insert thickness above the baseplate (mm).
    pub thickness: f64,
    /// Radial clearance of the medial socket over the femoral sphere (mm).
    pub clearance: f64,
    /// Depth of the socket excavation below the insert top face (mm).
    pub socket_depth: f64,
    /// Anterior extent trimmed off to avoid patellar conflict (mm).
    pub anterior_cut: f64,
    /// Extra drop of the planar lateral relief below the seated lateral
    /// condyle, leaving it free to translate antero-posteriorly (mm).
    pub lateral_dish: f64,
    /// Node spacing of the extraction grid (mm).
    pub mesh_spacing: f64,
}

impl Default for InsertParams {
    fn default() -> Self {
        Self {
            thickness: 9.0,
            clearance: 0.1,
            socket_depth: 2.0,
            anterior_cut: 3.0,
            lateral_dish: 0.2,
            mesh_spacing: 0.4,
        }
    }
}

/// Recovers an articular sphere from a designed component mesh. The design
/// mesher snaps articular vertices exactly onto their sphere, so the sphere
/// is found by consensus: random vertex quadruples near the seed propose
/// candidate spheres, the one agreeing exactly with the most vertices wins.
pub(crate) fn recover_sphere(
    mesh: &TriMesh,
    seed: &Sphere,
) -> Result<Sphere, ImplantError> {
    use rand::{Rng, SeedableRng};

    let region: Vec<Point3<f64>> = mesh
        .vertices
        .iter()
        .filter(|v| seed.signed_distance(v).abs() < 5.0)
        .cloned()
        .collect();
    if region.len() < 50 {
        return Err(ImplantError::IncompatibleComponents(format!(
            "articular sphere recovery found only {} surface samples",
            region.len()
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best: Option<(usize, Sphere)> = None;
    for _ in 0..4000 {
        let mut pts = [Point3::origin(); 4];
        for p in &mut pts {
            *p = region[rng.gen_range(0..region.len())];
        }
        let Ok(s) = fit_sphere(&pts) else { continue };
        if (s.center - seed.center).norm() > 8.0 || (s.radius - seed.radius).abs() > 8.0 {
            continue;
        }
        let count = region
            .iter()
            .filter(|v| s.signed_distance(v).abs() < 1e-6)
            .count();
        if count >= 100 && best.as_ref().map_or(true, |&(bc, _)| count > bc) {
            best = Some((count, s));
        }
        if best.as_ref().map_or(false, |&(c, _)| c > region.len() / 2) {
            break;
        }
    }
    let Some((_, s)) = best else {
        return Err(ImplantError::IncompatibleComponents(
            "no articular sphere found on the femoral component".into(),
        ));
    };
    let inliers: Vec<Point3<f64>> = region
        .iter()
        .filter(|v| s.signed_distance(v).abs() < 1e-6)
        .cloned()
        .collect();
    Ok(fit_sphere(&inliers)?)
}

/// Articular spheres of the seated femoral component in the tibial design
/// frame under a neutral-extension assembly convention (medial sides
/// aligned, knee centers coincident in the plane). Returns the medial
/// socket sphere (femoral radius plus clearance, sunk to the configured
/// depth) and the lateral femoral sphere at its seated position.
pub(crate) fn socket_spheres(
    femoral: &ImplantComponent,
    tibial_top: f64,
    femoral_core: &FemoralCore,
    tibial_core: &TibialCore,
    params: &InsertParams,
) -> Result<(Sphere, Sphere), ImplantError> {
    if femoral.kind != ComponentKind::Femoral {
        return Err(ImplantError::IncompatibleComponents(
            "first component is not femoral".into(),
        ));
    }
    let patient = femoral.mesh_in_patient();
    let medial = recover_sphere(&patient, &femoral_core.condylar_spheres[0])?;
    let lateral = recover_sphere(&patient, &femoral_core.condylar_spheres[1])?;

    let fem_frame = FemoralCutFrame::from_core(femoral_core);
    let c_med = fem_frame.to_local(&medial.center);
    let c_lat = fem_frame.to_local(&lateral.center);

    // medial sign of the tibial frame
    let medial_plateau = tibial_core.result.require_point("Medial Plateau")?;
    let ml = tibial_core.ml_direction.into_inner();
    let t_sign = if ml.dot(&(medial_plateau - tibial_core.contour_origin)) >= 0.0 {
        1.0
    } else {
        -1.0
    };
    let s = fem_frame.medial_sign * t_sign;
    let r_socket = medial.radius + params.clearance;
    let z_med = tibial_top + r_socket - params.socket_depth;
    let socket = Sphere::new(Point3::new(c_med.x * s, c_med.y, z_med), r_socket);
    let seated_lateral = Sphere::new(
        Point3::new(c_lat.x * s, c_lat.y, z_med + (c_lat.z - c_med.z)),
        lateral.radius,
    );
    Ok((socket, seated_lateral))
}

/// Builds the polyethylene insert: the baseplate contour extruded to the
/// configured thickness, a spherical medial socket congruent with the
/// femoral medial sphere plus clearance, a flat lateral surface and an
/// anterior trim.
pub fn design_insert(
    femoral: &ImplantComponent,
    tibial: &ImplantComponent,
    femoral_core: &FemoralCore,
    tibial_core: &TibialCore,
    params: &InsertParams,
) -> Result<ImplantComponent, ImplantError> {
    if tibial.kind != ComponentKind::TibialBaseplate {
        return Err(ImplantError::IncompatibleComponents(
            "second component is not a tibial baseplate".into(),
        ));
    }
    // recover the baseplate footprint from a mid-plate section
    let (_, hi) = tibial.mesh.aabb();
    let t_plate = hi.z;
    let section = Plane {
        point: Point3::new(0.0, 0.0, t_plate / 2.0),
        normal: Unit::new_normalize(Vector3::z()),
    };
    let loops = section_loops(&tibial.mesh, &section);
    let mut base_poly: Option<Polygon2> = None;
    for lp in loops {
        let pts: Vec<Point2<f64>> = lp.iter().map(|p| Point2::new(p.x, p.y)).collect();
        if pts.len() < 3 {
            continue;
        }
        let poly = Polygon2 { points: pts };
        if base_poly.as_ref().map_or(true, |b| poly.perimeter() > b.perimeter()) {
            base_poly = Some(poly);
        }
    }
    let base_poly = base_poly.ok_or(ImplantError::NoIntersection)?.canonical();

    // anterior trim
    let y_max = base_poly.points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let poly = base_poly
        .clip_half_plane(
            Point2::new(0.0, y_max - params.anterior_cut),
            Vector2::new(0.0, -1.0),
        )
        .canonical()
        .resample(params.mesh_spacing);

    let top = t_plate + params.thickness;
    let (socket, lateral) = socket_spheres(femoral, top, femoral_core, tibial_core, params)?;

    // the socket opening must land inside the footprint
    let dip = top - (socket.center.z - socket.radius);
    let opening = if dip > 0.0 {
        (socket.radius * socket.radius - (socket.radius - dip) * (socket.radius - dip))
            .max(0.0)
            .sqrt()
    } else {
        0.0
    };
    let sd_center = poly.signed_distance(&Point2::new(socket.center.x, socket.center.y));
    if sd_center > -(opening + 0.5) {
        return Err(ImplantError::IncompatibleComponents(format!(
            "medial sphere projects {:.1} mm from the baseplate interior",
            sd_center + opening
        )));
    }
    if socket.center.z - socket.radius < t_plate + 2.0 {
        return Err(ImplantError::InvalidGeometry(
            "socket excavation leaves less than 2 mm of insert floor".into(),
        ));
    }

    // planar lateral relief: a flat face just below the seated lateral
    // condyle, bounded medially by a divider wall clear of the socket rim
    let z_relief = lateral.center.z - lateral.radius - params.lateral_dish;
    if z_relief < t_plate + 2.0 {
        return Err(ImplantError::InvalidGeometry(
            "lateral relief leaves less than 2 mm of insert floor".into(),
        ));
    }
    let lat_dir = (lateral.center.x - socket.center.x).signum();
    let x_div = socket.center.x + lat_dir * (opening + 1.5);
    if (lateral.center.x - x_div) * lat_dir < 3.0 {
        return Err(ImplantError::IncompatibleComponents(
            "lateral condyle overlaps the medial socket region".into(),
        ));
    }

    let poly_for_sdf = poly.clone();
    let cache: RefCell<HashMap<(u64, u64), f64>> = RefCell::new(HashMap::new());
    let sdf = move |x: &Point3<f64>| -> f64 {
        let key = (x.x.to_bits(), x.y.to_bits());
        let d2 = *cache
            .borrow_mut()
            .entry(key)
            .or_insert_with(|| poly_for_sdf.signed_distance(&Point2::new(x.x, x.y)));
        let base = d2.max(t_plate - x.z).max(x.z - top);
        let carved = base.max(-socket.signed_distance(x));
        carved.max((lat_dir * (x.x - x_div)).min(x.z - z_relief))
    };

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max2) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &poly.points {
        x_min = x_min.min(p.x);
        x_max = x_max.max(p.x);
        y_min = y_min.min(p.y);
        y_max2 = y_max2.max(p.y);
    }
    let lo = Point3::new(x_min - 2.0, y_min - 2.0, t_plate - 2.0);
    let hi_pt = Point3::new(x_max + 2.0, y_max2 + 2.0, top + 2.0);
    let snaps = vec![
        SnapSurface::Plane(Plane {
            point: Point3::new(0.0, 0.0, top),
            normal: Unit::new_normalize(Vector3::z()),
        }),
        SnapSurface::Plane(Plane {
            point: Point3::new(0.0, 0.0, t_plate),
            normal: Unit::new_normalize(-Vector3::z()),
        }),
        SnapSurface::Plane(Plane {
            point: Point3::new(0.0, 0.0, z_relief),
            normal: Unit::new_normalize(Vector3::z()),
        }),
        SnapSurface::Plane(Plane {
            point: Point3::new(x_div, 0.0, 0.0),
            normal: Unit::new_normalize(Vector3::x() * lat_dir),
        }),
        SnapSurface::Sphere(socket),
        SnapSurface::Wall(poly),
    ];
    let mesh = mesh_sdf(&sdf, lo, hi_pt, params.mesh_spacing, &snaps)?;
    if !mesh.is_watertight() {
        return Err(ImplantError::InvalidGeometry(
            "insert surface is not watertight".into(),
        ));
    }
    let selfx = count_self_intersections(&mesh);
    if selfx > 0 {
        return Err(ImplantError::InvalidGeometry(format!(
            "insert has {selfx} self-intersecting triangle pairs"
        )));
    }
    Ok(ImplantComponent { kind: ComponentKind::Insert, mesh, frame: tibial.frame.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle_deg;
    use crate::geometry::Axis;
    use crate::morphometry::{tibial_core_chain, TibialCoreConfig};
    use crate::synth::{generate_bone, BoneParams};

    #[test]
    fn baseplate_is_valid_and_keel_follows_the_axis() {
        let (tibia, truth) = generate_bone(&BoneParams::default_tibia()).unwrap();
        let core =
            tibial_core_chain(&truth.landmarks, &tibia, &TibialCoreConfig::default()).unwrap();
        let params = TibialDesignParams::default();
        let comp = design_tibial(&core, &tibia, &params).unwrap();
        assert!(comp.mesh.is_watertight());
        assert!(comp.mesh.signed_volume() > 1_000.0);

        // keel axis is the mechanical axis by construction; confirm the
        // deepest mesh vertex lies close to that axis
        let deepest = comp
            .mesh_in_patient()
            .vertices
            .iter()
            .map(|v| {
                let q = tibial_frame(&core).inverse().apply(v);
                (q.z, *v)
            })
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .unwrap();
        let axis = Axis {
            point: core.contour_origin,
            direction: core.mechanical_axis.direction,
        };
        assert!(axis.distance_to(&deepest.1) < params.keel_radius + 1.0);
        let keel_axis = Axis::through(core.contour_origin, deepest.1);
        assert!(axis_angle_deg(&keel_axis, &core.mechanical_axis) < 15.0);
    }

    #[test]
    fn baseplate_contour_respects_rim_margin() {
        let (tibia, truth) = generate_bone(&BoneParams::default_tibia()).unwrap();
        let core =
            tibial_core_chain(&truth.landmarks, &tibia, &TibialCoreConfig::default()).unwrap();
        let params = TibialDesignParams::default();
        let bone = resection_contour(&core, &tibia).unwrap();
        let (plate, cut_y) = baseplate_contour(&bone, &params).unwrap();

        // sample the plate contour away from the straight cut: every point
        // sits rim_margin inside the bone contour
        let dense = plate.resample(0.5);
        let mut n = 0usize;
        let mut sum_sq = 0.0;
        for p in &dense.points {
            if p.y < cut_y + 1.0 {
                continue;
            }
            let d = bone.signed_distance(p);
            assert!(d < 0.0, "plate point outside bone contour");
            sum_sq += (d + params.rim_margin) * (d + params.rim_margin);
            n += 1;
        }
        let rmse = (sum_sq / n as f64).sqrt();
        assert!(rmse <= 0.1, "contour offset rmse {rmse}");
    }
}
