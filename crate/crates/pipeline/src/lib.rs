//! End-to-end case orchestration for the knee arthroplasty planning
//! toolkit: structured-text case configuration, staged execution with
//! persisted per-stage artifacts, shape-model building, and evaluation
//! reports against reference data.
//!
//! The pipeline runs five sequential stages per case:
//! `volume` (label post-processing) → `geometry` (meshing and smoothing) →
//! `fit` (statistical shape model fitting per bone) → `morphometry`
//! (landmark propagation and parameter chains) → `implant` (resections,
//! component design, validity and contour-fit metrics). Left knees are
//! mirrored into the right-side frame before fitting and all outputs are
//! mirrored back. Every stage writes its results to the case output
//! directory, so a run can resume from any stage's persisted artifacts.

use thiserror::Error;

pub mod artifacts;
pub mod build;
pub mod config;
pub mod evaluate;
pub mod report;
pub mod stages;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Invalid or unreadable configuration; maps to exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// A pipeline stage failed; maps to exit code 3.
    #[error("stage '{stage}' failed: {reason}")]
    Stage { stage: &'static str, reason: String },
    #[error("missing reference: {0}")]
    MissingReference(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
