//! Morphological parameters: primary landmark propagation and adjustment,
//! and a typed DAG of derived anatomical parameters.

mod chains;
mod eval;
mod registry;
mod rules;

use nalgebra::Point3;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::geometry::{Axis, GeometryError, Plane, Sphere};

pub use chains::{
    femoral_core_chain, tibial_core_chain, FemoralCore, FemoralCoreConfig, TibialCore,
    TibialCoreConfig,
};
pub use eval::{
    adjust_to_mesh, aggregate_landmark_errors, eval_graph, landmark_error, propagate_primary,
    ErrorStats, EvalContext,
};
pub use registry::{
    default_femoral_registry, default_tibial_registry, ParamRegistry, ParamSpec, Rule,
};

#[derive(Debug, Error)]
pub enum MorphometryError {
    #[error("model has no landmark index for '{0}'")]
    MissingLandmarkIndex(String),
    #[error("landmark index for '{label}' out of range ({index} >= {vertices})")]
    LandmarkIndexOutOfRange { label: String, index: u32, vertices: usize },
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("no shared landmark labels between computed and reference sets")]
    NoSharedLabels,
    #[error("derivation cycle involving '{0}'")]
    CycleDetected(String),
    #[error("duplicate parameter name '{0}'")]
    DuplicateName(String),
    #[error("unknown rule '{0}'")]
    UnknownRule(String),
    #[error("parameter '{param}' references unknown input '{input}'")]
    UnknownInput { param: String, input: String },
    #[error("parameter '{param}': rule '{rule}' expects {expected}")]
    BadInputs { param: String, rule: String, expected: &'static str },
    #[error("parameter '{param}': declared kind {declared} but rule yields {yields}")]
    KindMismatch { param: String, declared: ParamKind, yields: ParamKind },
    #[error("required parameter '{name}' failed: {reason}")]
    RuleFailed { name: String, reason: String },
    #[error("required parameter '{name}' has unexpected kind")]
    UnexpectedKind { name: String },
    #[error("geometry error: {0}")]
    Geometry(#[from] GeometryError),
    #[error("malformed registry: {0}")]
    Malformed(String),
}

/// Type tag of a morphological parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Point,
    Axis,
    Plane,
    Sphere,
    PointSet,
    Length,
    Angle,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Point => "point",
            ParamKind::Axis => "axis",
            ParamKind::Plane => "plane",
            ParamKind::Sphere => "sphere",
            ParamKind::PointSet => "pointset",
            ParamKind::Length => "length",
            ParamKind::Angle => "angle",
        }
    }

    pub fn parse(s: &str) -> Option<ParamKind> {
        Some(match s {
            "point" => ParamKind::Point,
            "axis" => ParamKind::Axis,
            "plane" => ParamKind::Plane,
            "sphere" => ParamKind::Sphere,
            "pointset" => ParamKind::PointSet,
            "length" => ParamKind::Length,
            "angle" => ParamKind::Angle,
            _ => return None,
        })
    }
}

impl std::fmt::Display for ParamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Value of a morphological parameter. Lengths in millimetres, angles in
/// degrees.
#[derive(Debug, Clone)]
pub enum ParamValue {
    Point(Point3<f64>),
    Axis(Axis),
    Plane(Plane),
    Sphere(Sphere),
    PointSet(Vec<Point3<f64>>),
    Length(f64),
    Angle(f64),
}

impl ParamValue {
    pub fn kind(&self) -> ParamKind {
        match self {
            ParamValue::Point(_) => ParamKind::Point,
            ParamValue::Axis(_) => ParamKind::Axis,
            ParamValue::Plane(_) => ParamKind::Plane,
            ParamValue::Sphere(_) => ParamKind::Sphere,
            ParamValue::PointSet(_) => ParamKind::PointSet,
            ParamValue::Length(_) => ParamKind::Length,
            ParamValue::Angle(_) => ParamKind::Angle,
        }
    }
}

/// Where a parameter value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Propagated from the fitted shape model.
    SsmInherited,
    /// Propagated, then pulled toward the segmented surface.
    MeshAdjusted,
    /// Computed by a derivation rule.
    Derived,
}

/// Outcome of one registry entry.
#[derive(Debug, Clone)]
pub enum ParamOutcome {
    Value(ParamValue, Provenance),
    Failed(String),
}

/// Evaluation result over a whole registry; every registry name is present,
/// either with a value or with a failure reason.
#[derive(Debug, Clone, Default)]
pub struct MorphometryResult {
    pub entries: BTreeMap<String, ParamOutcome>,
}

impl MorphometryResult {
    pub fn value(&self, name: &str) -> Option<&ParamValue> {
        match self.entries.get(name) {
            Some(ParamOutcome::Value(v, _)) => Some(v),
            _ => None,
        }
    }

    pub fn require(&self, name: &str) -> Result<&ParamValue, MorphometryError> {
        match self.entries.get(name) {
            Some(ParamOutcome::Value(v, _)) => Ok(v),
            Some(ParamOutcome::Failed(reason)) => Err(MorphometryError::RuleFailed {
                name: name.to_string(),
                reason: reason.clone(),
            }),
            None => Err(MorphometryError::RuleFailed {
                name: name.to_string(),
                reason: "not in registry".to_string(),
            }),
        }
    }

    pub fn require_point(&self, name: &str) -> Result<Point3<f64>, MorphometryError> {
        match self.require(name)? {
            ParamValue::Point(p) => Ok(*p),
            ParamValue::Sphere(s) => Ok(s.center),
            _ => Err(MorphometryError::UnexpectedKind { name: name.to_string() }),
        }
    }

    pub fn require_axis(&self, name: &str) -> Result<Axis, MorphometryError> {
        match self.require(name)? {
            ParamValue::Axis(a) => Ok(a.clone()),
            _ => Err(MorphometryError::UnexpectedKind { name: name.to_string() }),
        }
    }

    pub fn require_plane(&self, name: &str) -> Result<Plane, MorphometryError> {
        match self.require(name)? {
            ParamValue::Plane(p) => Ok(p.clone()),
            _ => Err(MorphometryError::UnexpectedKind { name: name.to_string() }),
        }
    }

    pub fn require_sphere(&self, name: &str) -> Result<Sphere, MorphometryError> {
        match self.require(name)? {
            ParamValue::Sphere(s) => Ok(*s),
            _ => Err(MorphometryError::UnexpectedKind { name: name.to_string() }),
        }
    }

    pub fn require_scalar(&self, name: &str) -> Result<f64, MorphometryError> {
        match self.require(name)? {
            ParamValue::Length(v) | ParamValue::Angle(v) => Ok(*v),
            _ => Err(MorphometryError::UnexpectedKind { name: name.to_string() }),
        }
    }
}
