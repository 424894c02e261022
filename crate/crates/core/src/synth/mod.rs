//! Synthetic parametric bone population with exact generative ground truth.
//!
//! Bones are stylized on purpose: a bowed shaft tube, sphere-cap condyles,
//! a grooved trochlear block (femur) or dished plateau (tibia). Every
//! landmark, axis and sphere the downstream modules are asked to recover is
//! placed analytically from the generative parameters, so recovery accuracy
//! can be measured without clinical data.

mod bone;
mod perturb;
mod population;
mod sdf;
mod voxelize;

use std::collections::BTreeMap;

use nalgebra::Point3;
use thiserror::Error;

use crate::geometry::{Axis, Sphere};

pub use bone::{generate_bone, generate_bone_at, mirror_bone, DEFAULT_MESH_SPACING};
pub use perturb::{add_osteophytes, crop_extremities};
pub use population::{sample_population, write_manifest, PopulationCase};
pub use voxelize::voxelize;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid bone parameters: {0}")]
    InvalidParams(String),
    #[error("mesh is not watertight ({0} boundary edges)")]
    NonWatertight(usize),
    #[error("geometry error: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoneKind {
    Femur,
    Tibia,
}

impl BoneKind {
    pub fn name(&self) -> &'static str {
        match self {
            BoneKind::Femur => "femur",
            BoneKind::Tibia => "tibia",
        }
    }
}

/// Generative parameters for one synthetic bone (right side; mirror for
/// left). Frame: +x medial, +y anterior, +z proximal, millimetres.
#[derive(Debug, Clone)]
pub struct BoneParams {
    pub bone: BoneKind,
    pub length: f64,
    pub shaft_radius: f64,
    /// Shaft bow angle in degrees; realized as the arc sagitta of the shaft
    /// curve in the anterior direction. Zero gives an exactly straight shaft.
    pub shaft_bow: f64,
    /// (medial, lateral). Femur: condylar sphere radii. Tibia: plateau dish
    /// sphere radii.
    pub condyle_radii: (f64, f64),
    pub condyle_separation: f64,
    /// Femur: depth of the trochlear groove. Tibia: depth of the plateau
    /// dishes.
    pub trochlea_depth: f64,
    /// Opening angle of the trochlear groove in degrees (femur only).
    pub sulcus_angle: f64,
    /// Femoral head sphere radius (unused for tibia but must stay positive).
    pub head_radius: f64,
    /// Distal plafond block width (tibia only; must stay positive).
    pub plafond_width: f64,
    /// Axial rotation of the articular assembly about the knee-center
    /// vertical, degrees.
    pub version_angle: f64,
    /// Coronal tilt of the proximal end relative to the knee, degrees.
    pub varus_angle: f64,
    pub seed: u64,
}

impl BoneParams {
    pub fn default_femur() -> Self {
        BoneParams {
            bone: BoneKind::Femur,
            length: 430.0,
            shaft_radius: 14.0,
            shaft_bow: 3.0,
            condyle_radii: (22.0, 21.0),
            condyle_separation: 46.0,
            trochlea_depth: 6.0,
            sulcus_angle: 140.0,
            head_radius: 24.0,
            plafond_width: 50.0,
            version_angle: 0.0,
            varus_angle: 0.0,
            seed: 0,
        }
    }

    pub fn default_tibia() -> Self {
        BoneParams {
            bone: BoneKind::Tibia,
            length: 380.0,
            shaft_radius: 12.0,
            shaft_bow: 2.0,
            condyle_radii: (24.0, 23.0),
            condyle_separation: 46.0,
            trochlea_depth: 3.0,
            sulcus_angle: 140.0,
            head_radius: 24.0,
            plafond_width: 50.0,
            version_angle: 0.0,
            varus_angle: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("length", self.length),
            ("shaft_radius", self.shaft_radius),
            ("condyle_radius_medial", self.condyle_radii.0),
            ("condyle_radius_lateral", self.condyle_radii.1),
            ("condyle_separation", self.condyle_separation),
            ("trochlea_depth", self.trochlea_depth),
            ("sulcus_angle", self.sulcus_angle),
            ("head_radius", self.head_radius),
            ("plafond_width", self.plafond_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(SynthError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, r) in [
            ("condyle_radius_medial", self.condyle_radii.0),
            ("condyle_radius_lateral", self.condyle_radii.1),
        ] {
            if !(15.0..=35.0).contains(&r) {
                return Err(SynthError::InvalidParams(format!(
                    "{name} must lie in [15, 35] mm, got {r}"
                )));
            }
        }
        if !(350.0..=500.0).contains(&self.length) {
            return Err(SynthError::InvalidParams(format!(
                "length must lie in [350, 500] mm, got {}",
                self.length
            )));
        }
        Ok(())
    }
}

/// Analytic ground truth emitted with every generated bone. Perturbations
/// (osteophytes) never touch it.
#[derive(Debug, Clone)]
pub struct BoneTruth {
    pub params: BoneParams,
    /// Label → point, in the bone frame. Femur carries the 11 validated
    /// landmark labels plus 5 shaft/head primaries; tibia carries 7.
    pub landmarks: BTreeMap<String, Point3<f64>>,
    /// Hip/ankle center → knee center.
    pub mechanical_axis: Axis,
    /// Samples of the generative shaft center curve, distal to proximal.
    pub shaft_points: Vec<Point3<f64>>,
    /// (medial, lateral) articular spheres: condyles for the femur, plateau
    /// dish spheres for the tibia.
    pub condyle_spheres: [Sphere; 2],
    pub knee_center: Point3<f64>,
}

/// The 11 femoral landmark labels validated downstream, alphabetical.
pub const FEMORAL_VALIDATION_LABELS: [&str; 11] = [
    "AP Sizing Point",
    "Lateral Anterior",
    "Lateral Distal",
    "Lateral Epicondyle",
    "Lateral Posterior",
    "Medial Anterior",
    "Medial Distal",
    "Medial Epicondyle",
    "Medial Posterior",
    "Top Groove",
    "Top Notch",
];

/// Extra femoral primaries (shaft and head) completing the 16-primary set.
pub const FEMORAL_EXTRA_LABELS: [&str; 5] = [
    "Femoral Head Apex",
    "Medial Shaft Point",
    "Lateral Shaft Point",
    "Anterior Shaft Point",
    "Trochlea Center",
];

/// The 7 tibial primary landmark labels.
pub const TIBIAL_LABELS: [&str; 7] = [
    "Tibial Knee Center",
    "Medial Plateau",
    "Lateral Plateau",
    "Tibial Tubercle",
    "Plafond Center",
    "Medial Malleolus",
    "Lateral Malleolus",
];
