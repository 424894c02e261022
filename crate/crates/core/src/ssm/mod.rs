//! Augmented statistical shape models: correspondence building, PCA,
//! quality metrics, and partial-data fitting.

mod build;
mod ffd;
mod fit;
mod io;
mod quality;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Point3};
use thiserror::Error;

use crate::geometry::{GeometryError, RigidTransform, TriMesh};

pub use build::{build_reference, pca_build, synthesize};
pub use ffd::{bspline_relax, RelaxTarget};
pub use fit::{fit_energy, fit_partial, FitOptions};
pub use io::{read_model, read_model_file, write_model, write_model_file};
pub use quality::{compactness, generality, specificity};

#[derive(Debug, Error)]
pub enum SsmError {
    #[error("need at least {needed} shapes, got {got}")]
    TooFewShapes { needed: usize, got: usize },
    #[error("training mesh {index} is not closed")]
    NonClosedMesh { index: usize },
    #[error("correspondence diverged: reference motion increased two rounds in a row")]
    CorrespondenceDiverged,
    #[error("fit diverged: energy increased persistently")]
    FitDiverged,
    #[error("insufficient overlap: post-registration median distance {median:.2} mm")]
    InsufficientOverlap { median: f64 },
    #[error("geometry error: {0}")]
    Geometry(#[from] GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Malformed(String),
}

/// Training shapes in dense correspondence: shared topology, per-shape
/// vertex arrays of identical length, and landmark vertex indices.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pub topology: Vec<[u32; 3]>,
    pub shapes: Vec<Vec<Point3<f64>>>,
    pub landmark_indices: BTreeMap<String, u32>,
}

impl CorrespondenceSet {
    pub fn n_shapes(&self) -> usize {
        self.shapes.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.shapes.first().map_or(0, Vec::len)
    }

    /// Assigns each landmark the index of the nearest vertex of `reference`
    /// (typically the correspondence template or the mean shape).
    pub fn assign_landmarks(
        &mut self,
        reference: &[Point3<f64>],
        landmarks: &BTreeMap<String, Point3<f64>>,
    ) {
        self.landmark_indices.clear();
        for (label, p) in landmarks {
            let best = reference
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - p).norm_squared().partial_cmp(&(*b - p).norm_squared()).unwrap()
                })
                .map(|(i, _)| i as u32)
                .unwrap_or(0);
            self.landmark_indices.insert(label.clone(), best);
        }
    }
}

/// PCA shape model over correspondent vertices, augmented with landmark
/// information at build time.
#[derive(Debug, Clone)]
pub struct ShapeModel {
    /// 3V stacked vertex coordinates (x0, y0, z0, x1, …), millimetres.
    pub mean: DVector<f64>,
    /// 3V × M, columns orthonormal.
    pub modes: DMatrix<f64>,
    /// M mode variances, mm², descending.
    pub variances: DVector<f64>,
    pub topology: Vec<[u32; 3]>,
    pub landmark_indices: BTreeMap<String, u32>,
    /// Augmentation weight the model was built with.
    pub landmark_weight: f64,
}

impl ShapeModel {
    pub fn n_vertices(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn mean_mesh(&self) -> TriMesh {
        TriMesh {
            vertices: vector_to_points(&self.mean),
            triangles: self.topology.clone(),
        }
    }

    /// Coefficients of the orthogonal projection of a corresponded vertex
    /// set onto the mode subspace.
    pub fn project(&self, vertices: &[Point3<f64>]) -> DVector<f64> {
        let x = points_to_vector(vertices);
        self.modes.transpose() * (x - &self.mean)
    }
}

/// Result of fitting a model to partial data.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Mode coefficients (mm along each mode).
    pub coefficients: DVector<f64>,
    /// Maps the partial-data (patient) frame into the model frame.
    pub transform: RigidTransform,
    /// Fitted surface in the model frame, model topology.
    pub fitted_mesh: TriMesh,
    /// RMS distance of the registered partial points to the fitted surface.
    pub residual_rmse: f64,
}

pub(crate) fn points_to_vector(points: &[Point3<f64>]) -> DVector<f64> {
    let mut v = DVector::zeros(points.len() * 3);
    for (i, p) in points.iter().enumerate() {
        v[3 * i] = p.x;
        v[3 * i + 1] = p.y;
        v[3 * i + 2] = p.z;
    }
    v
}

pub(crate) fn vector_to_points(v: &DVector<f64>) -> Vec<Point3<f64>> {
    (0..v.len() / 3).map(|i| Point3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])).collect()
}
