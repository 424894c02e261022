//! Bone shape modelling and implant design toolkit.
//!
//! The crate covers the geometric core of an automated knee arthroplasty
//! planning pipeline: label-volume post-processing and meshing, statistical
//! shape model building and partial-data fitting, morphological parameter
//! derivation, medial-pivot implant construction, and the quantitative
//! metrics used to evaluate every stage. A parametric synthetic bone
//! generator ([`synth`]) provides ground-truth test data so the whole chain
//! can be exercised without clinical images.
//!
//! All lengths are millimetres, all angles degrees unless stated otherwise.

pub mod geometry;
pub mod implant;
pub mod morphometry;
pub mod ssm;
pub mod synth;
pub mod volume;
