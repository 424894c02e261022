//! Standard shape-model quality metrics: compactness, generality,
//! specificity.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::build::pca_build;
use super::{vector_to_points, CorrespondenceSet, ShapeModel, SsmError};
use crate::geometry::absolute_orientation;

/// Cumulative fraction of total variance captured by the first 1..=M modes.
pub fn compactness(model: &ShapeModel) -> Vec<f64> {
    let total: f64 = model.variances.iter().sum();
    if total <= 0.0 {
        return vec![0.0; model.n_modes()];
    }
    let mut acc = 0.0;
    model
        .variances
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect()
}

/// Leave-one-out generality: for each training shape, rebuild the model
/// without it, project the held-out shape onto the first `m` modes, and
/// measure the per-vertex reconstruction RMSE. Returns the mean over all
/// folds, in millimetres.
pub fn generality(
    set: &CorrespondenceSet,
    landmark_weight: f64,
    m: usize,
) -> Result<f64, SsmError> {
    let n = set.n_shapes();
    if n < 3 {
        return Err(SsmError::TooFewShapes { needed: 3, got: n });
    }
    let mut total = 0.0;
    for leave in 0..n {
        let mut sub = set.clone();
        sub.shapes.remove(leave);
        let model = pca_build(&sub, landmark_weight)?;
        total += reconstruction_rmse(&model, &set.shapes[leave], m)?;
    }
    Ok(total / n as f64)
}

/// Specificity: draw `samples` random shapes from the first `m` modes of
/// the model (coefficients ~ N(0, variance)) and measure each sample's
/// per-vertex RMSE to its nearest training shape after rigid alignment.
/// Returns the mean over samples. Deterministic per seed.
pub fn specificity(
    model: &ShapeModel,
    set: &CorrespondenceSet,
    m: usize,
    samples: usize,
    seed: u64,
) -> Result<f64, SsmError> {
    if set.n_shapes() == 0 || samples == 0 {
        return Err(SsmError::TooFewShapes { needed: 1, got: 0 });
    }
    let m = m.min(model.n_modes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nv = model.n_vertices() as f64;
    let mut total = 0.0;
    for _ in 0..samples {
        let mut b = DVector::zeros(m);
        for i in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            b[i] = z * model.variances[i].sqrt();
        }
        let x = &model.mean + model.modes.columns(0, m) * &b;
        let pts = vector_to_points(&x);
        let mut best = f64::INFINITY;
        for shape in &set.shapes {
            let t = absolute_orientation(&pts, shape, false)?;
            let ss: f64 = pts
                .iter()
                .zip(shape)
                .map(|(p, q)| (t.apply(p) - q).norm_squared())
                .sum();
            best = best.min((ss / nv).sqrt());
        }
        total += best;
    }
    Ok(total / samples as f64)
}

/// Per-vertex RMSE between a shape and its projection onto the first `m`
/// modes, after rigid alignment to the model mean.
pub(crate) fn reconstruction_rmse(
    model: &ShapeModel,
    shape: &[nalgebra::Point3<f64>],
    m: usize,
) -> Result<f64, SsmError> {
    let m = m.min(model.n_modes());
    let mean_pts = vector_to_points(&model.mean);
    // alignment to the mean drifts slightly from alignment to the
    // reconstruction; one refinement pass removes most of that bias
    let mut target: Vec<nalgebra::Point3<f64>> = mean_pts;
    let mut rmse = f64::INFINITY;
    for _ in 0..2 {
        let t = absolute_orientation(shape, &target, false)?;
        let moved: Vec<nalgebra::Point3<f64>> = shape.iter().map(|p| t.apply(p)).collect();
        let b = model.project(&moved);
        let recon = &model.mean + model.modes.columns(0, m) * b.rows(0, m);
        let recon_pts = vector_to_points(&recon);
        let ss: f64 = moved
            .iter()
            .zip(&recon_pts)
            .map(|(p, q)| (p - q).norm_squared())
            .sum();
        rmse = (ss / model.n_vertices() as f64).sqrt();
        target = recon_pts;
    }
    Ok(rmse)
}
