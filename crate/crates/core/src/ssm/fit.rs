//! Fitting a shape model to partial surface data.

use nalgebra::{DVector, Matrix3, Point3, Vector3};

use crate::geometry::{icp_register, IcpOptions, TriBvh, TriMesh};

use super::build::{register_robust, synthesize};
use super::ffd::{bspline_relax, RelaxTarget};
use super::{FitResult, ShapeModel, SsmError};

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Number of modes to optimize; 0 means all modes of the model.
    pub modes: usize,
    /// Weight of the Mahalanobis prior Σ bᵢ²/varᵢ.
    pub lambda_reg: f64,
    /// Expected ratio of the full bone's long-axis span to the partial
    /// data's span; 1.0 when the crop includes both bone ends.
    pub span_prior: f64,
    /// Lattice of the final free-form relaxation step.
    pub lattice: [usize; 3],
    /// Regularization of the final free-form relaxation step.
    pub ffd_reg: f64,
    /// Maximum optimizer iterations per outer round.
    pub max_iters: usize,
    /// Whether to run the final free-form relaxation toward the data.
    pub relax: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            modes: 0,
            lambda_reg: 1e-3,
            span_prior: 1.0,
            lattice: [6, 6, 6],
            ffd_reg: 1e-2,
            max_iters: 200,
            relax: true,
        }
    }
}

/// How many partial vertices participate in registration and energy
/// evaluation; more are strided away deterministically.
const MAX_FIT_POINTS: usize = 1200;
/// Registered points farther than this from the model surface count as
/// non-overlapping.
const OVERLAP_LIMIT_MM: f64 = 10.0;

/// Fits the model to a partial surface observed in an arbitrary (patient)
/// frame. Returns mode coefficients, the rigid transform from the partial
/// frame into the model frame, the fitted surface and the residual RMS.
pub fn fit_partial(
    model: &ShapeModel,
    partial: &TriMesh,
    opts: &FitOptions,
) -> Result<FitResult, SsmError> {
    if partial.vertices.len() < 4 {
        return Err(SsmError::Malformed("partial surface has too few vertices".into()));
    }
    let m_total = model.n_modes();
    let mut m = if opts.modes == 0 { m_total } else { opts.modes.min(m_total) };
    // drop numerically dead modes; the Mahalanobis prior divides by their
    // variance and would blow up
    let var0 = if m_total > 0 { model.variances[0] } else { 0.0 };
    while m > 0 && model.variances[m - 1] <= (var0 * 1e-9).max(1e-12) {
        m -= 1;
    }

    let points = subsample(&partial.vertices, MAX_FIT_POINTS);

    // step 1: initialize the dominant coefficient from the long-axis span
    let mut b = DVector::<f64>::zeros(m);
    if m > 0 {
        let target_span = principal_span(&points) * opts.span_prior;
        b[0] = secant_span_match(model, target_span);
    }

    // step 2: rigid registration of the partial data onto the instance
    let mut shape = synthesize(model, &b);
    let shape_bvh = TriBvh::build(&shape);
    let mut transform = register_robust(
        &points,
        &shape,
        &shape_bvh,
        IcpOptions { allow_scale: false, trim_fraction: 0.25, ..IcpOptions::default() },
    )?;
    let median = median_distance(&points, &transform, &shape);
    if median > OVERLAP_LIMIT_MM {
        return Err(SsmError::InsufficientOverlap { median });
    }

    // step 3: alternate coefficient optimization and re-registration
    for round in 0..2 {
        let registered: Vec<Point3<f64>> = points.iter().map(|p| transform.apply(p)).collect();
        b = optimize_coefficients(model, m, opts.lambda_reg, &registered, b, opts.max_iters)?;
        shape = synthesize(model, &b);
        if round == 0 {
            let delta = icp_register(
                &registered,
                &shape,
                IcpOptions { allow_scale: false, trim_fraction: 0.25, ..IcpOptions::default() },
            )?;
            transform = delta.compose(&transform);
        }
    }

    // step 4: free-form relaxation toward the covered part of the data
    let registered: Vec<Point3<f64>> = points.iter().map(|p| transform.apply(p)).collect();
    let fitted_mesh = if opts.relax {
        bspline_relax(
            &shape,
            RelaxTarget::PointsWithin(&registered, OVERLAP_LIMIT_MM),
            opts.lattice,
            opts.ffd_reg,
        )
    } else {
        shape
    };

    let bvh = TriBvh::build(&fitted_mesh);
    let residual_rmse = (registered
        .iter()
        .map(|p| {
            let d = bvh.closest_point(p).0;
            d * d
        })
        .sum::<f64>()
        / registered.len() as f64)
        .sqrt();

    Ok(FitResult { coefficients: b, transform, fitted_mesh, residual_rmse })
}

/// Energy and gradient of the fit objective at coefficients `b`:
/// mean squared point-to-surface distance of the registered data plus
/// `lambda · Σ bᵢ²/varᵢ`. The gradient treats the surface foot points as
/// fixed (envelope theorem): each foot point is linear in `b` through the
/// barycentric weights of its triangle.
pub fn fit_energy(
    model: &ShapeModel,
    m: usize,
    lambda: f64,
    points: &[Point3<f64>],
    b: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let mesh = synthesize(model, b);
    let bvh = TriBvh::build(&mesh);
    let inv_p = 1.0 / points.len() as f64;
    let mut energy = 0.0;
    let mut grad = DVector::<f64>::zeros(m);
    for p in points {
        let (dist, foot, tri, bary) = bvh.closest_point(p);
        energy += dist * dist * inv_p;
        let d: Vector3<f64> = p - foot;
        for (k, &w) in bary.iter().enumerate() {
            let v = mesh.triangles[tri][k] as usize;
            for c in 0..m {
                let dot = model.modes[(3 * v, c)] * d.x
                    + model.modes[(3 * v + 1, c)] * d.y
                    + model.modes[(3 * v + 2, c)] * d.z;
                grad[c] -= 2.0 * inv_p * w * dot;
            }
        }
    }
    for i in 0..m {
        let var = model.variances[i].max(1e-12);
        energy += lambda * b[i] * b[i] / var;
        grad[i] += 2.0 * lambda * b[i] / var;
    }
    (energy, grad)
}

/// L-BFGS (history 8) with Armijo backtracking on the fit objective.
fn optimize_coefficients(
    model: &ShapeModel,
    m: usize,
    lambda: f64,
    points: &[Point3<f64>],
    b0: DVector<f64>,
    max_iters: usize,
) -> Result<DVector<f64>, SsmError> {
    const HISTORY: usize = 8;
    const ARMIJO_C1: f64 = 1e-4;
    let mut b = b0;
    if m == 0 {
        return Ok(b);
    }
    let (mut energy, mut grad) = fit_energy(model, m, lambda, points, &b);
    if !energy.is_finite() {
        return Err(SsmError::FitDiverged);
    }
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();

    for _ in 0..max_iters {
        if grad.norm() < 1e-6 {
            break;
        }
        let dir = lbfgs_direction(&grad, &s_hist, &y_hist);
        let slope = grad.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -grad.clone() };
        let slope = grad.dot(&dir);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..25 {
            let trial = &b + step * &dir;
            let (e, g) = fit_energy(model, m, lambda, points, &trial);
            if !e.is_finite() {
                return Err(SsmError::FitDiverged);
            }
            if e <= energy + ARMIJO_C1 * step * slope {
                accepted = Some((trial, e, g));
                break;
            }
            step *= 0.5;
        }
        let Some((new_b, new_e, new_g)) = accepted else {
            break; // no descent possible at machine precision
        };
        let s = &new_b - &b;
        let y = &new_g - &grad;
        if s.dot(&y) > 1e-12 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let improvement = energy - new_e;
        b = new_b;
        energy = new_e;
        grad = new_g;
        if improvement < 1e-12 {
            break;
        }
    }
    Ok(b)
}

fn lbfgs_direction(
    grad: &DVector<f64>,
    s_hist: &[DVector<f64>],
    y_hist: &[DVector<f64>],
) -> DVector<f64> {
    let mut q = -grad.clone();
    let k = s_hist.len();
    let mut alpha = vec![0.0; k];
    let mut rho = vec![0.0; k];
    for i in (0..k).rev() {
        rho[i] = 1.0 / y_hist[i].dot(&s_hist[i]);
        alpha[i] = rho[i] * s_hist[i].dot(&q);
        q -= alpha[i] * &y_hist[i];
    }
    if k > 0 {
        let gamma = s_hist[k - 1].dot(&y_hist[k - 1]) / y_hist[k - 1].norm_squared();
        q *= gamma;
    }
    for i in 0..k {
        let beta = rho[i] * y_hist[i].dot(&q);
        q += (alpha[i] - beta) * &s_hist[i];
    }
    q
}

fn subsample(points: &[Point3<f64>], max: usize) -> Vec<Point3<f64>> {
    if points.len() <= max {
        return points.to_vec();
    }
    let stride = points.len() as f64 / max as f64;
    (0..max).map(|i| points[(i as f64 * stride) as usize]).collect()
}

/// Extent of the point cloud along its first principal direction.
fn principal_span(points: &[Point3<f64>]) -> f64 {
    let n = points.len() as f64;
    let mut c = Vector3::zeros();
    for p in points {
        c += p.coords;
    }
    c /= n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let imax = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let axis = eig.eigenvectors.column(imax);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in points {
        let t = axis.dot(&(p.coords - c));
        lo = lo.min(t);
        hi = hi.max(t);
    }
    hi - lo
}

/// Solves span(mean + b·mode₀) = target for b by secant iteration,
/// clamped to ±3 standard deviations of the first mode.
fn secant_span_match(model: &ShapeModel, target: f64) -> f64 {
    let sigma = model.variances[0].sqrt().max(1e-6);
    let span_at = |b: f64| {
        let mesh = synthesize(model, &DVector::from_element(1, b));
        principal_span(&mesh.vertices)
    };
    let mut b0 = 0.0;
    let mut f0 = span_at(b0) - target;
    let mut b1 = sigma;
    let mut f1 = span_at(b1) - target;
    for _ in 0..12 {
        if (f1 - f0).abs() < 1e-12 {
            break;
        }
        let next = (b1 - f1 * (b1 - b0) / (f1 - f0)).clamp(-3.0 * sigma, 3.0 * sigma);
        b0 = b1;
        f0 = f1;
        b1 = next;
        f1 = span_at(b1) - target;
        if f1.abs() < 0.1 {
            break;
        }
    }
    b1
}

fn median_distance(
    points: &[Point3<f64>],
    transform: &crate::geometry::RigidTransform,
    mesh: &TriMesh,
) -> f64 {
    let bvh = TriBvh::build(mesh);
    let mut ds: Vec<f64> = points
        .iter()
        .map(|p| bvh.closest_point(&transform.apply(p)).0)
        .collect();
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ds[ds.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::surface_rmse;
    use crate::ssm::{pca_build, CorrespondenceSet};
    use crate::synth::{generate_bone_at, BoneParams};
    use nalgebra::{Rotation3, Vector3};
    use std::collections::BTreeMap;

    fn toy_model() -> ShapeModel {
        let t = generate_bone_at(&BoneParams::default_femur(), 5.0).unwrap().0;
        let shapes = [0.92, 1.0, 1.08, 0.97]
            .iter()
            .map(|&s| {
                t.vertices
                    .iter()
                    .map(|p| Point3::new(s * p.x, s * p.y, (s * 1.01) * p.z))
                    .collect()
            })
            .collect();
        let set = CorrespondenceSet {
            topology: t.triangles.clone(),
            shapes,
            landmark_indices: BTreeMap::new(),
        };
        pca_build(&set, 0.0).unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let model = toy_model();
        let m = model.n_modes();
        let mut b = DVector::zeros(m);
        for i in 0..m {
            b[i] = 0.4 * model.variances[i].sqrt() * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let probe = synthesize(&model, &DVector::zeros(m));
        let points = subsample(&probe.vertices, 300);
        let (_, grad) = fit_energy(&model, m, 1e-3, &points, &b);
        let scale = grad.norm().max(1.0);
        for i in 0..m {
            let h = 1e-4 * b[i].abs().max(1.0);
            let mut bp = b.clone();
            bp[i] += h;
            let mut bm = b.clone();
            bm[i] -= h;
            let (ep, _) = fit_energy(&model, m, 1e-3, &points, &bp);
            let (em, _) = fit_energy(&model, m, 1e-3, &points, &bm);
            let fd = (ep - em) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() / scale < 1e-4,
                "mode {i}: fd {fd} analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn recovers_transformed_model_instance() {
        let model = toy_model();
        let m = model.n_modes();
        let mut b_true = DVector::zeros(m);
        b_true[0] = 0.8 * model.variances[0].sqrt();
        let target = synthesize(&model, &b_true);

        let rot = Rotation3::from_euler_angles(0.3, -0.2, 0.5);
        let moved = TriMesh {
            vertices: target
                .vertices
                .iter()
                .map(|p| rot * p + Vector3::new(40.0, -25.0, 60.0))
                .collect(),
            triangles: target.triangles.clone(),
        };

        let fit = fit_partial(&model, &moved, &FitOptions::default()).unwrap();
        assert!(fit.residual_rmse < 0.5, "residual {}", fit.residual_rmse);
        let err = surface_rmse(&fit.fitted_mesh, &target, 0).unwrap();
        assert!(err < 1.0, "surface rmse {err}");
        // the returned transform maps the observed data into the model frame
        let p = moved.vertices[10];
        let back = fit.transform.apply(&p);
        assert!((back - target.vertices[10]).norm() < 2.0);
    }

    #[test]
    fn incompatible_data_reports_insufficient_overlap() {
        let model = toy_model();
        let mean = model.mean_mesh();
        let huge = TriMesh {
            vertices: mean.vertices.iter().map(|p| Point3::from(p.coords * 3.0)).collect(),
            triangles: mean.triangles.clone(),
        };
        match fit_partial(&model, &huge, &FitOptions::default()) {
            Err(SsmError::InsufficientOverlap { median }) => assert!(median > 10.0),
            other => panic!("expected insufficient overlap, got {other:?}"),
        }
    }
}
