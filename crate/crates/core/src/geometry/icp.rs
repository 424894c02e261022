//! Iterative closest point registration against a triangle mesh.

use nalgebra::{Matrix3, Point3, Vector3};

use super::{GeometryError, RigidTransform, TriBvh, TriMesh};

#[derive(Debug, Clone, Copy)]
pub struct IcpOptions {
    pub allow_scale: bool,
    pub max_iters: usize,
    /// Convergence threshold on the change of RMS residual between iterations.
    pub tol: f64,
    /// Fraction of worst correspondences rejected each iteration; 0 disables
    /// trimming. Useful when the source only partially overlaps the target.
    pub trim_fraction: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self { allow_scale: false, max_iters: 100, tol: 1e-7, trim_fraction: 0.0 }
    }
}

/// Registers `source` points onto the surface of `target`, returning the
/// transform that maps source into the target frame.
pub fn icp_register(
    source: &[Point3<f64>],
    target: &TriMesh,
    opts: IcpOptions,
) -> Result<RigidTransform, GeometryError> {
    if target.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    if source.len() < 4 {
        return Err(GeometryError::DegenerateSource);
    }
    check_nondegenerate(source)?;

    let bvh = TriBvh::build(target);
    let mut transform = RigidTransform::identity();
    let mut prev_rms = f64::INFINITY;

    for _ in 0..opts.max_iters {
        let moved: Vec<Point3<f64>> = source.iter().map(|p| transform.apply(p)).collect();
        let mut pairs: Vec<(usize, Point3<f64>, f64)> = moved
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (d, q, _, _) = bvh.closest_point(p);
                (i, q, d)
            })
            .collect();
        if opts.trim_fraction > 0.0 {
            pairs.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(&b.0)));
            let keep = ((1.0 - opts.trim_fraction) * pairs.len() as f64).ceil() as usize;
            pairs.truncate(keep.max(4));
        }
        let rms = (pairs.iter().map(|p| p.2 * p.2).sum::<f64>() / pairs.len() as f64).sqrt();

        let src_pts: Vec<Point3<f64>> = pairs.iter().map(|&(i, _, _)| source[i]).collect();
        let dst_pts: Vec<Point3<f64>> = pairs.iter().map(|&(_, q, _)| q).collect();
        transform = absolute_orientation(&src_pts, &dst_pts, opts.allow_scale)?;

        if (prev_rms - rms).abs() < opts.tol {
            break;
        }
        prev_rms = rms;
    }
    Ok(transform)
}

/// Closed-form least-squares rigid (optionally similarity) alignment mapping
/// `src` onto `dst` (Kabsch / Umeyama).
pub fn absolute_orientation(
    src: &[Point3<f64>],
    dst: &[Point3<f64>],
    allow_scale: bool,
) -> Result<RigidTransform, GeometryError> {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Matrix3::<f64>::zeros();
    let mut var_src = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let a = p - cs;
        let b = q - cd;
        h += b * a.transpose();
        var_src += a.norm_squared();
    }
    var_src /= n;
    let svd = h.svd(true, true);
    let u = svd.u.ok_or(GeometryError::DegenerateSource)?;
    let vt = svd.v_t.ok_or(GeometryError::DegenerateSource)?;
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = if allow_scale {
        let sv = svd.singular_values;
        (sv[0] + sv[1] + d[(2, 2)] * sv[2]) / (n * var_src)
    } else {
        1.0
    };
    if !scale.is_finite() || scale <= 0.0 {
        return Err(GeometryError::DegenerateSource);
    }
    let translation = cd.coords - scale * (rotation * cs.coords);
    Ok(RigidTransform { rotation, translation, scale })
}

fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    let mut acc = Vector3::zeros();
    for p in points {
        acc += p.coords;
    }
    Point3::from(acc / points.len() as f64)
}

fn check_nondegenerate(points: &[Point3<f64>]) -> Result<(), GeometryError> {
    let c = centroid(points);
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eigs = cov.symmetric_eigen().eigenvalues;
    let max = eigs.max();
    if max <= 0.0 || eigs.min() < 1e-12 * max {
        return Err(GeometryError::DegenerateSource);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriMesh;
    use nalgebra::{Point3, Rotation3, Vector3};

    fn tetra() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(0.0, 10.0, 0.0),
                Point3::new(0.0, 0.0, 10.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn identity_on_exact_match() {
        let m = tetra();
        let t = icp_register(&m.vertices, &m, IcpOptions::default()).unwrap();
        assert!((t.rotation - nalgebra::Matrix3::identity()).norm() < 1e-9);
        assert!(t.translation.norm() < 1e-9);
    }

    #[test]
    fn recovers_small_rigid_motion() {
        let m = tetra();
        let rot = Rotation3::from_euler_angles(0.0, 0.0, 10f64.to_radians());
        let shift = Vector3::new(0.5, -0.4, 0.3);
        let moved: Vec<Point3<f64>> =
            m.vertices.iter().map(|p| rot * p + shift).collect();
        let t = icp_register(&moved, &m, IcpOptions { max_iters: 200, ..Default::default() })
            .unwrap();
        let rms: f64 = (moved
            .iter()
            .zip(&m.vertices)
            .map(|(p, q)| (t.apply(p) - q).norm_squared())
            .sum::<f64>()
            / 4.0)
            .sqrt();
        assert!(rms < 0.1, "rms {rms}");
    }

    #[test]
    fn recovers_scale() {
        let m = tetra();
        let scaled: Vec<Point3<f64>> = m.vertices.iter().map(|p| Point3::from(p.coords * 1.2)).collect();
        let t = absolute_orientation(&scaled, &m.vertices, true).unwrap();
        assert!((t.scale - 1.0 / 1.2).abs() < 0.01);
    }

    #[test]
    fn collinear_source_rejected() {
        let m = tetra();
        let line: Vec<Point3<f64>> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(icp_register(&line, &m, IcpOptions::default()).is_err());
    }
}
