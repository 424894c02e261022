//! Parametric bone construction: implicit model, meshing, analytic truth.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use crate::geometry::{Axis, Sphere, TriMesh};
use crate::volume::{marching_tets, ScalarGrid};

use super::sdf::{sd_capped_zcylinder, sd_polyline_tube, sd_round_box, sd_sphere};
use super::{BoneKind, BoneParams, BoneTruth, SynthError};

/// Grid spacing used by [`generate_bone`]; coarser grids (e.g. for the
/// correspondence template) go through [`generate_bone_at`].
pub const DEFAULT_MESH_SPACING: f64 = 2.5;

const SHAFT_SAMPLES: usize = 64;

/// Generates the bone at the default mesh resolution.
pub fn generate_bone(p: &BoneParams) -> Result<(TriMesh, BoneTruth), SynthError> {
    generate_bone_at(p, DEFAULT_MESH_SPACING)
}

/// Generates the bone surface by sampling the implicit model on a grid of
/// the given spacing and extracting the zero level set.
pub fn generate_bone_at(p: &BoneParams, spacing: f64) -> Result<(TriMesh, BoneTruth), SynthError> {
    p.validate()?;
    if !(spacing > 0.0) {
        return Err(SynthError::InvalidParams(format!("spacing must be positive, got {spacing}")));
    }
    let model = match p.bone {
        BoneKind::Femur => femur_model(p),
        BoneKind::Tibia => tibia_model(p),
    };
    let (lo, hi) = model.bounds;
    let margin = 2.0 * spacing + 1.0;
    let origin = [lo.x - margin, lo.y - margin, lo.z - margin];
    let dims = [
        ((hi.x - lo.x + 2.0 * margin) / spacing).ceil() as usize + 1,
        ((hi.y - lo.y + 2.0 * margin) / spacing).ceil() as usize + 1,
        ((hi.z - lo.z + 2.0 * margin) / spacing).ceil() as usize + 1,
    ];
    let sdf = model.sdf;
    let grid = ScalarGrid::sample(dims, [spacing; 3], origin, |q| -sdf(&q));
    let mesh = marching_tets(&grid, 0.0);
    if !mesh.is_watertight() {
        return Err(SynthError::NonWatertight(mesh.boundary_edges().len()));
    }
    Ok((mesh, model.truth))
}

/// Reflects a right-side bone (and its truth) into a left-side bone across
/// the sagittal plane x = 0.
pub fn mirror_bone(mesh: &TriMesh, truth: &BoneTruth) -> (TriMesh, BoneTruth) {
    let mirror_p = |p: &Point3<f64>| Point3::new(-p.x, p.y, p.z);
    let mut t = truth.clone();
    for v in t.landmarks.values_mut() {
        *v = mirror_p(v);
    }
    t.mechanical_axis = Axis::new(mirror_p(&t.mechanical_axis.point), {
        let d = t.mechanical_axis.direction.into_inner();
        Vector3::new(-d.x, d.y, d.z)
    });
    for s in t.condyle_spheres.iter_mut() {
        s.center = mirror_p(&s.center);
    }
    t.knee_center = mirror_p(&t.knee_center);
    for q in t.shaft_points.iter_mut() {
        *q = mirror_p(q);
    }
    (mesh.mirrored_x(), t)
}

struct BoneModel {
    sdf: Box<dyn Fn(&Point3<f64>) -> f64>,
    bounds: (Point3<f64>, Point3<f64>),
    truth: BoneTruth,
}

/// Axial rotation by `deg` about the vertical line through (cx, cy).
fn version_rotation(deg: f64, cx: f64, cy: f64) -> impl Fn(&Point3<f64>) -> Point3<f64> + Copy {
    let a = deg.to_radians();
    let (s, c) = (a.sin(), a.cos());
    move |p: &Point3<f64>| {
        let (dx, dy) = (p.x - cx, p.y - cy);
        Point3::new(cx + c * dx - s * dy, cy + s * dx + c * dy, p.z)
    }
}

/// Quadratic shaft curve from `b` to `t` with anterior sagitta `d`.
fn shaft_curve(b: Point3<f64>, t: Point3<f64>, d: f64) -> Vec<Point3<f64>> {
    (0..=SHAFT_SAMPLES)
        .map(|i| {
            let s = i as f64 / SHAFT_SAMPLES as f64;
            let mut q = b + (t - b) * s;
            q.y += 4.0 * d * s * (1.0 - s);
            q
        })
        .collect()
}

fn bow_sagitta(bow_deg: f64, chord: f64) -> f64 {
    // circular-arc sagitta ≈ L·θ/8 for small arc angle θ
    chord * bow_deg.to_radians() / 8.0
}

fn femur_model(p: &BoneParams) -> BoneModel {
    let (r_m, r_l) = p.condyle_radii;
    let r_avg = 0.5 * (r_m + r_l);
    let sep = p.condyle_separation;
    let y_front = 0.75 * r_avg;
    let stem_radius = 0.6 * p.shaft_radius;
    // keep the groove floor clear of the metaphyseal stem so the landmark
    // at its proximal end stays on the surface for every parameter draw
    let depth = p.trochlea_depth.min(y_front - stem_radius - 1.5).max(1.0);
    let y_back = -0.3 * r_avg;
    let z0_b = 0.6 * r_avg;
    let z1_b = 2.2 * r_avg;
    let ky = 0.5 * (y_front - depth);

    // groove carve cylinder from depth + sulcus opening angle
    let w = depth * (0.5 * p.sulcus_angle.to_radians()).tan();
    let r_g = (w * w + depth * depth) / (2.0 * depth);
    let y_cyl = y_front - depth + r_g;

    let c_med = Point3::new(0.5 * sep, 0.0, r_m);
    let c_lat = Point3::new(-0.5 * sep, 0.0, r_l);
    let block_c = Point3::new(0.0, 0.5 * (y_back + y_front), 0.5 * (z0_b + z1_b));
    let block_h = Vector3::new(0.5 * sep, 0.5 * (y_front - y_back), 0.5 * (z1_b - z0_b));
    let block_round = 3.0;

    let kz = 0.5 * (z0_b + z1_b);
    let knee_center = Point3::new(0.0, ky, kz);
    let z_head = p.length - p.head_radius;
    let hx = (z_head - kz) * p.varus_angle.to_radians().tan();
    let head_center = Point3::new(hx, ky, z_head);

    // main shaft starts above the trochlear block (its bottom cap must not
    // protrude through the anterior flange); a thinner posterior stem
    // bridges it to the block
    let z_shaft_lo = z1_b + p.shaft_radius + 2.0;
    // shaft bottom sits on the knee-to-head line so varus tilts shaft and
    // mechanical axis together
    let shaft_b = knee_center + (head_center - knee_center) * ((z_shaft_lo - kz) / (z_head - kz));
    let chord = (head_center - shaft_b).norm();
    let curve = shaft_curve(shaft_b, head_center, bow_sagitta(p.shaft_bow, chord));
    let stem = vec![
        Point3::new(0.0, 0.0, kz),
        Point3::new(0.0, 0.0, z1_b + 2.0),
        shaft_b + Vector3::new(0.0, 0.0, 5.0),
    ];

    let unrot = version_rotation(-p.version_angle, 0.0, ky);
    let rot = version_rotation(p.version_angle, 0.0, ky);
    let shaft_radius = p.shaft_radius;
    let head_radius = p.head_radius;
    let sdf_curve = curve.clone();
    let sdf = Box::new(move |q: &Point3<f64>| {
        let d_prox = sd_polyline_tube(q, &sdf_curve, shaft_radius)
            .min(sd_polyline_tube(q, &stem, stem_radius))
            .min(sd_sphere(q, &head_center, head_radius));
        let u = unrot(q);
        let mut d_dist = sd_sphere(&u, &c_med, r_m)
            .min(sd_sphere(&u, &c_lat, r_l))
            .min(sd_round_box(&u, &block_c, &block_h, block_round));
        d_dist = d_dist.max(-sd_capped_zcylinder(&u, 0.0, y_cyl, r_g, z0_b, z1_b));
        d_prox.min(d_dist)
    });

    let mut landmarks = BTreeMap::new();
    // distal assembly (rotates with version)
    let mut put_rot = |label: &str, pt: Point3<f64>| {
        landmarks.insert(label.to_string(), rot(&pt));
    };
    put_rot("Medial Epicondyle", Point3::new(0.5 * sep + r_m, 0.0, r_m));
    put_rot("Lateral Epicondyle", Point3::new(-0.5 * sep - r_l, 0.0, r_l));
    put_rot("Medial Posterior", Point3::new(0.5 * sep, -r_m, r_m));
    put_rot("Lateral Posterior", Point3::new(-0.5 * sep, -r_l, r_l));
    put_rot("Medial Distal", Point3::new(0.5 * sep, 0.0, 0.0));
    put_rot("Lateral Distal", Point3::new(-0.5 * sep, 0.0, 0.0));
    put_rot("Top Notch", Point3::new(0.0, 0.0, z0_b));
    put_rot("Top Groove", Point3::new(0.0, y_front - depth, z1_b));
    put_rot("Trochlea Center", Point3::new(0.0, y_front - depth, kz));
    // anterior flange face points, proximal enough that the flat face is
    // exposed (the distal face is swallowed by the condylar spheres)
    let x_facet = 0.5 * (w + 0.5 * sep);
    put_rot("Medial Anterior", Point3::new(x_facet, y_front, kz + 0.45 * block_h.z));
    put_rot("Lateral Anterior", Point3::new(-x_facet, y_front, kz + 0.45 * block_h.z));
    put_rot("AP Sizing Point", Point3::new(x_facet, y_front, kz + 0.7 * block_h.z));
    // shaft and head (fixed)
    let mid = curve[SHAFT_SAMPLES / 2];
    landmarks.insert("Femoral Head Apex".into(), Point3::new(hx, ky, p.length));
    landmarks.insert("Medial Shaft Point".into(), mid + Vector3::new(shaft_radius, 0.0, 0.0));
    landmarks.insert("Lateral Shaft Point".into(), mid + Vector3::new(-shaft_radius, 0.0, 0.0));
    landmarks.insert("Anterior Shaft Point".into(), mid + Vector3::new(0.0, shaft_radius, 0.0));

    // the distal assembly swings about (0, ky) with version; the head
    // sphere can outreach the condyles in every direction
    let r_big = r_m.max(r_l);
    let distal_xy = 0.5 * sep + r_big;
    let v_sin = p.version_angle.to_radians().sin().abs();
    let x_reach = distal_xy.max(hx.abs() + head_radius);
    let y_reach = (ky.abs() + r_big + distal_xy * v_sin)
        .max(ky.abs() + head_radius)
        .max(ky + bow_sagitta(p.shaft_bow, chord) + shaft_radius)
        + 2.0;
    let bounds = (
        Point3::new(-x_reach - 2.0, -y_reach, -1.0),
        Point3::new(x_reach + 2.0, y_reach, p.length + 1.0),
    );

    BoneModel {
        sdf,
        bounds,
        truth: BoneTruth {
            params: p.clone(),
            landmarks,
            mechanical_axis: Axis::through(head_center, knee_center),
            shaft_points: curve,
            condyle_spheres: [
                Sphere { center: rot(&c_med), radius: r_m },
                Sphere { center: rot(&c_lat), radius: r_l },
            ],
            knee_center,
        },
    }
}

fn tibia_model(p: &BoneParams) -> BoneModel {
    let (r_m, r_l) = p.condyle_radii;
    let sep = p.condyle_separation;
    let dish = p.trochlea_depth;
    let length = p.length;

    let hp = 18.0; // plateau slab height
    let plat_c = Point3::new(0.0, 0.0, length - 0.5 * hp);
    let plat_h = Vector3::new(0.5 * sep + 12.0, 20.0, 0.5 * hp);
    let plat_round = 4.0;
    let dish_med = Point3::new(0.5 * sep, 0.0, length + r_m - dish);
    let dish_lat = Point3::new(-0.5 * sep, 0.0, length + r_l - dish);

    let plaf_c = Point3::new(0.0, 0.0, 12.0);
    let plaf_h = Vector3::new(0.5 * p.plafond_width, 16.0, 12.0);
    let plaf_round = 3.0;

    let shaft_b = Point3::new(0.0, 0.0, 18.0);
    let shaft_t = Point3::new(0.0, 0.0, length - hp - 4.0);
    let chord = (shaft_t - shaft_b).norm();
    let curve = shaft_curve(shaft_b, shaft_t, bow_sagitta(p.shaft_bow, chord));

    let unrot = version_rotation(-p.version_angle, 0.0, 0.0);
    let rot = version_rotation(p.version_angle, 0.0, 0.0);
    let shaft_radius = p.shaft_radius;
    let sdf_curve = curve.clone();
    let sdf = Box::new(move |q: &Point3<f64>| {
        let d_fixed = sd_polyline_tube(q, &sdf_curve, shaft_radius)
            .min(sd_round_box(q, &plaf_c, &plaf_h, plaf_round));
        let u = unrot(q);
        let mut d_plat = sd_round_box(&u, &plat_c, &plat_h, plat_round);
        d_plat = d_plat
            .max(-sd_sphere(&u, &dish_med, r_m))
            .max(-sd_sphere(&u, &dish_lat, r_l));
        d_fixed.min(d_plat)
    });

    let mut landmarks = BTreeMap::new();
    let mut put_rot = |label: &str, pt: Point3<f64>| {
        landmarks.insert(label.to_string(), rot(&pt));
    };
    put_rot("Tibial Knee Center", Point3::new(0.0, 0.0, length));
    put_rot("Medial Plateau", Point3::new(0.5 * sep, 0.0, length - dish));
    put_rot("Lateral Plateau", Point3::new(-0.5 * sep, 0.0, length - dish));
    put_rot("Tibial Tubercle", Point3::new(0.0, plat_h.y, length - 0.5 * hp));
    landmarks.insert("Plafond Center".into(), Point3::new(0.0, 0.0, 0.0));
    landmarks.insert("Medial Malleolus".into(), Point3::new(0.5 * p.plafond_width, 0.0, 12.0));
    landmarks.insert("Lateral Malleolus".into(), Point3::new(-0.5 * p.plafond_width, 0.0, 12.0));

    // the plateau slab rotates about the shaft axis with version; bound
    // its in-plane extent by the rotated box extents
    let (v_sin, v_cos) = {
        let v = p.version_angle.to_radians();
        (v.sin().abs(), v.cos().abs())
    };
    let x_reach = (plat_h.x * v_cos + plat_h.y * v_sin).max(plaf_h.x) + 2.0;
    let y_reach = (plat_h.x * v_sin + plat_h.y * v_cos)
        .max(plaf_h.y)
        .max(bow_sagitta(p.shaft_bow, chord) + shaft_radius)
        + 2.0;
    let knee_center = Point3::new(0.0, 0.0, length);
    BoneModel {
        sdf,
        bounds: (
            Point3::new(-x_reach, -y_reach, -1.0),
            Point3::new(x_reach, y_reach, length + 1.0),
        ),
        truth: BoneTruth {
            params: p.clone(),
            landmarks,
            mechanical_axis: Axis::through(Point3::new(0.0, 0.0, 0.0), knee_center),
            shaft_points: curve,
            condyle_spheres: [
                Sphere { center: rot(&dish_med), radius: r_m },
                Sphere { center: rot(&dish_lat), radius: r_l },
            ],
            knee_center,
        },
    }
}
