//! Least-squares primitive fitting (sphere, plane).

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector4};

use super::{GeometryError, Plane, Sphere};

/// Algebraic least-squares sphere fit, minimizing
/// Σ (‖p‖² − 2 c·p − k)² with k = r² − ‖c‖².
pub fn fit_sphere(points: &[Point3<f64>]) -> Result<Sphere, GeometryError> {
    if points.len() < 4 {
        return Err(GeometryError::DegeneratePoints);
    }
    // normal equations of [2p | 1] [c; k] = ‖p‖²
    let mut ata = Matrix4::<f64>::zeros();
    let mut atb = Vector4::<f64>::zeros();
    for p in points {
        let row = Vector4::new(2.0 * p.x, 2.0 * p.y, 2.0 * p.z, 1.0);
        let b = p.coords.norm_squared();
        ata += row * row.transpose();
        atb += row * b;
    }
    // scale for conditioning check
    let scale = ata.norm();
    let chol = ata.cholesky().ok_or(GeometryError::DegeneratePoints)?;
    let sol = chol.solve(&atb);
    // coplanar inputs make the system rank deficient; detect via residual of
    // the normal equations rather than relying on Cholesky failure alone
    if (ata * sol - atb).norm() > 1e-6 * scale.max(1.0) {
        return Err(GeometryError::DegeneratePoints);
    }
    let center = Point3::new(sol[0], sol[1], sol[2]);
    let r2 = sol[3] + center.coords.norm_squared();
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(GeometryError::DegeneratePoints);
    }
    // coplanarity check: minimum covariance eigenvalue near zero relative to spread
    let (_, eigs) = covariance(points);
    if eigs.min() < 1e-12 * eigs.max() {
        return Err(GeometryError::DegeneratePoints);
    }
    Ok(Sphere::new(center, r2.sqrt()))
}

/// Total-least-squares plane through the centroid; normal is the direction of
/// least variance. When `toward` is given the normal sign is chosen so that
/// the reference point lies on the positive side.
pub fn fit_plane_oriented(
    points: &[Point3<f64>],
    toward: Option<&Point3<f64>>,
) -> Result<Plane, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::DegeneratePoints);
    }
    let centroid = centroid(points);
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    // collinear points leave two near-zero eigenvalues
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let [min_i, mid_i, _] = [order[0], order[1], order[2]];
    if eig.eigenvalues[mid_i] < 1e-12 * eig.eigenvalues[order[2]].max(1e-300) {
        return Err(GeometryError::DegeneratePoints);
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(min_i).into();
    if let Some(t) = toward {
        if normal.dot(&(t - centroid)) < 0.0 {
            normal = -normal;
        }
    }
    Ok(Plane::new(centroid, normal))
}

pub fn fit_plane(points: &[Point3<f64>]) -> Result<Plane, GeometryError> {
    fit_plane_oriented(points, None)
}

fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    let mut acc = Vector3::zeros();
    for p in points {
        acc += p.coords;
    }
    Point3::from(acc / points.len() as f64)
}

fn covariance(points: &[Point3<f64>]) -> (Point3<f64>, Vector3<f64>) {
    let c = centroid(points);
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    (c, cov.symmetric_eigen().eigenvalues)
}
