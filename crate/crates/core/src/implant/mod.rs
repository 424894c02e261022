//! Medial-pivot implant design: resection planning, femoral / tibial /
//! insert component construction, contour flattening and fit metrics.

mod contour;
mod femoral;
mod resect;
mod solid;
mod tibial;
mod validity;

use thiserror::Error;

use crate::geometry::{GeometryError, RigidTransform, TriMesh};
use crate::morphometry::MorphometryError;

pub use contour::{
    arcs_beyond_line, flatten_contours, flatten_contours_multi, over_under_hang, section_loops,
    ContourPair, HangProfile, Polygon2,
};
pub use femoral::{articular_spheres, design_femoral, FemoralDesignParams, RadiusFn};
pub use resect::{compute_resections, FemoralCutFrame, ResectionConfig, ResectionSet};
pub use tibial::{design_insert, design_tibial, InsertParams, TibialDesignParams};
pub use validity::{export_component, validity_check, ValidityConfig, ValidityReport};

#[derive(Debug, Error)]
pub enum ImplantError {
    #[error("missing morphometric parameter: {0}")]
    MissingParameter(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("incompatible components: {0}")]
    IncompatibleComponents(String),
    #[error("plane does not intersect the mesh")]
    NoIntersection,
    #[error("geometry error: {0}")]
    Geometry(#[from] GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<MorphometryError> for ImplantError {
    fn from(e: MorphometryError) -> Self {
        ImplantError::MissingParameter(e.to_string())
    }
}

/// Which implant a component mesh represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Femoral,
    TibialBaseplate,
    Insert,
}

impl ComponentKind {
    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Femoral => "femoral",
            ComponentKind::TibialBaseplate => "tibial_baseplate",
            ComponentKind::Insert => "insert",
        }
    }
}

/// A designed implant component. The mesh lives in the component's own
/// design frame; `frame` maps component coordinates into patient space.
#[derive(Debug, Clone)]
pub struct ImplantComponent {
    pub kind: ComponentKind,
    pub mesh: TriMesh,
    pub frame: RigidTransform,
}

impl ImplantComponent {
    /// The component mesh expressed in patient coordinates.
    pub fn mesh_in_patient(&self) -> TriMesh {
        self.mesh.transformed(&self.frame)
    }
}
