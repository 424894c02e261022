//! Correspondence construction and augmented PCA model building.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Vector3};

use crate::geometry::{
    absolute_orientation, icp_register, IcpOptions, RigidTransform, TriBvh, TriMesh,
};

use super::ffd::{bspline_relax, RelaxTarget};
use super::{points_to_vector, vector_to_points, CorrespondenceSet, ShapeModel, SsmError};

/// Centroid and principal directions (descending variance, right-handed)
/// of a point cloud, plus its RMS radius.
fn principal_frame(points: &[Point3<f64>]) -> (Point3<f64>, Matrix3<f64>, f64) {
    let n = points.len() as f64;
    let mut c = Vector3::zeros();
    for p in points {
        c += p.coords;
    }
    c /= n;
    let mut cov = Matrix3::zeros();
    let mut rms2 = 0.0;
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
        rms2 += d.norm_squared();
    }
    cov /= n;
    rms2 /= n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut r = Matrix3::zeros();
    for (col, &k) in order.iter().enumerate() {
        r.set_column(col, &eig.eigenvectors.column(k));
    }
    if r.determinant() < 0.0 {
        let c2 = -r.column(2);
        r.set_column(2, &c2);
    }
    (Point3::from(c), r, rms2.sqrt())
}

/// Coarse similarity alignment of a point cloud onto a mesh: matches
/// centroids, RMS radii and principal axes, trying the four proper
/// axis-flip combinations and keeping the one with the smallest median
/// surface distance. Robust initialization for ICP when the data may be
/// arbitrarily rotated or scaled.
pub(crate) fn coarse_align(
    src: &[Point3<f64>],
    dst_vertices: &[Point3<f64>],
    dst_bvh: &TriBvh,
    allow_scale: bool,
) -> RigidTransform {
    let (cs, rs, rms_s) = principal_frame(src);
    let (cd, rd, rms_d) = principal_frame(dst_vertices);
    let scale = if allow_scale && rms_s > 0.0 { rms_d / rms_s } else { 1.0 };
    let probes: Vec<&Point3<f64>> = src.iter().step_by((src.len() / 200).max(1)).collect();
    let mut best: Option<(f64, RigidTransform)> = None;
    for flip in [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]] {
        let f = Matrix3::from_diagonal(&Vector3::from_row_slice(&flip));
        let rot = rd * f * rs.transpose();
        let t = RigidTransform::new(rot, cd.coords - scale * (rot * cs.coords), scale);
        let mut ds: Vec<f64> = probes.iter().map(|p| dst_bvh.closest_point(&t.apply(p)).0).collect();
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ds[ds.len() / 2];
        if best.as_ref().map_or(true, |(m, _)| median < *m) {
            best = Some((median, t));
        }
    }
    best.unwrap().1
}

/// Coarse principal-axes initialization followed by ICP refinement.
pub(crate) fn register_robust(
    src: &[Point3<f64>],
    dst: &TriMesh,
    dst_bvh: &TriBvh,
    opts: IcpOptions,
) -> Result<RigidTransform, SsmError> {
    let init = coarse_align(src, &dst.vertices, dst_bvh, opts.allow_scale);
    let moved: Vec<Point3<f64>> = src.iter().map(|p| init.apply(p)).collect();
    let refine = icp_register(&moved, dst, opts)?;
    Ok(refine.compose(&init))
}

/// Builds dense correspondence by propagating a template onto every
/// training mesh: similarity ICP, coarse B-spline relaxation, then
/// projection of each template vertex to the closest surface point. The
/// reference is re-estimated as the Procrustes mean and the process
/// repeats until it moves less than 0.1 mm RMS (at most 10 rounds).
pub fn build_reference(
    template: &TriMesh,
    meshes: &[TriMesh],
) -> Result<CorrespondenceSet, SsmError> {
    if meshes.len() < 3 {
        return Err(SsmError::TooFewShapes { needed: 3, got: meshes.len() });
    }
    for (i, m) in meshes.iter().enumerate() {
        if !m.is_watertight() {
            return Err(SsmError::NonClosedMesh { index: i });
        }
    }

    let topology = template.triangles.clone();
    let bvhs: Vec<TriBvh> = meshes.iter().map(TriBvh::build).collect();
    let mut reference = template.vertices.clone();
    let mut shapes: Vec<Vec<Point3<f64>>> = Vec::new();
    let mut prev_motion = f64::INFINITY;
    let mut rising = 0usize;

    for _round in 0..10 {
        shapes.clear();
        let ref_mesh = TriMesh { vertices: reference.clone(), triangles: topology.clone() };
        for (mesh, bvh) in meshes.iter().zip(&bvhs) {
            let t = register_robust(
                &reference,
                mesh,
                bvh,
                IcpOptions { allow_scale: true, ..IcpOptions::default() },
            )?;
            let moved = ref_mesh.transformed(&t);
            let relaxed = bspline_relax(&moved, RelaxTarget::Surface(mesh), [6, 6, 6], 1e-2);
            let shape: Vec<Point3<f64>> =
                relaxed.vertices.iter().map(|v| bvh.closest_point(v).1).collect();
            shapes.push(shape);
        }

        // Procrustes mean in the reference frame (similarity alignment so
        // the reference keeps the template's scale)
        let mut acc = vec![nalgebra::Vector3::<f64>::zeros(); reference.len()];
        for shape in &shapes {
            let t = absolute_orientation(shape, &reference, true)?;
            for (a, p) in acc.iter_mut().zip(shape) {
                *a += t.apply(p).coords;
            }
        }
        let inv_n = 1.0 / shapes.len() as f64;
        let new_ref: Vec<Point3<f64>> = acc.iter().map(|a| Point3::from(a * inv_n)).collect();
        let motion = (reference
            .iter()
            .zip(&new_ref)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            / reference.len() as f64)
            .sqrt();
        reference = new_ref;
        if motion < 0.1 {
            return Ok(CorrespondenceSet {
                topology,
                shapes,
                landmark_indices: Default::default(),
            });
        }
        if motion > prev_motion {
            rising += 1;
            if rising >= 2 {
                return Err(SsmError::CorrespondenceDiverged);
            }
        } else {
            rising = 0;
        }
        prev_motion = motion;
    }
    Ok(CorrespondenceSet { topology, shapes, landmark_indices: Default::default() })
}

/// Rigid Procrustes alignment of all shapes to their evolving mean.
/// Returns (aligned shape vectors as columns-worth of data, mean vector).
pub(crate) fn procrustes_align(
    shapes: &[Vec<Point3<f64>>],
) -> Result<(Vec<DVector<f64>>, DVector<f64>), SsmError> {
    let mut mean = points_to_vector(&shapes[0]);
    let mut aligned: Vec<DVector<f64>> = Vec::new();
    for _ in 0..50 {
        let mean_pts = vector_to_points(&mean);
        aligned = shapes
            .iter()
            .map(|s| {
                let t = absolute_orientation(s, &mean_pts, false)?;
                let moved: Vec<Point3<f64>> = s.iter().map(|p| t.apply(p)).collect();
                Ok(points_to_vector(&moved))
            })
            .collect::<Result<_, SsmError>>()?;
        let mut new_mean = DVector::zeros(mean.len());
        for a in &aligned {
            new_mean += a;
        }
        new_mean /= shapes.len() as f64;
        let motion = (&new_mean - &mean).norm() / (mean.len() as f64).sqrt();
        mean = new_mean;
        if motion < 1e-10 {
            break;
        }
    }
    Ok((aligned, mean))
}

/// Principal component analysis of a correspondence set with landmark
/// augmentation: the coordinate rows of landmark vertices participate in
/// the covariance with extra weight `landmark_weight`, steering the
/// retained subspace toward landmark-relevant variation. The returned
/// modes live in plain (unaugmented) shape space, orthonormal, with
/// variances descending.
pub fn pca_build(set: &CorrespondenceSet, landmark_weight: f64) -> Result<ShapeModel, SsmError> {
    let n = set.n_shapes();
    if n < 2 {
        return Err(SsmError::TooFewShapes { needed: 2, got: n });
    }
    let v = set.n_vertices();
    if set.shapes.iter().any(|s| s.len() != v) {
        return Err(SsmError::Malformed("shapes differ in vertex count".into()));
    }

    let (aligned, mean) = procrustes_align(&set.shapes)?;
    let dim = 3 * v;
    let mut d = DMatrix::<f64>::zeros(dim, n);
    for (j, a) in aligned.iter().enumerate() {
        d.set_column(j, &(a - &mean));
    }

    // Gram matrix of the augmented data: landmark rows counted with extra
    // squared weight w². Augmentation only shapes the Gram spectrum; the
    // mode vectors themselves are rebuilt from the plain data below.
    let w2 = landmark_weight * landmark_weight;
    let mut gram = d.transpose() * &d;
    if w2 > 0.0 && !set.landmark_indices.is_empty() {
        for &idx in set.landmark_indices.values() {
            for k in 0..3 {
                let row = d.row(3 * idx as usize + k);
                gram += w2 * (row.transpose() * &row);
            }
        }
    }
    gram /= (n - 1) as f64;

    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let max_eig = eig.eigenvalues[order[0]].max(0.0);
    let eps = (max_eig * 1e-9).max(1e-12);
    let kept: Vec<usize> = order.into_iter().filter(|&k| eig.eigenvalues[k] > eps).collect();

    if kept.is_empty() {
        return Ok(ShapeModel {
            mean,
            modes: DMatrix::zeros(dim, 0),
            variances: DVector::zeros(0),
            topology: set.topology.clone(),
            landmark_indices: set.landmark_indices.clone(),
            landmark_weight,
        });
    }

    // basis of the selected subspace in plain shape space
    let mut basis = DMatrix::<f64>::zeros(dim, kept.len());
    for (c, &k) in kept.iter().enumerate() {
        basis.set_column(c, &(&d * eig.eigenvectors.column(k)));
    }
    let q = basis.qr().q();

    // re-diagonalize the plain covariance inside that subspace so modes
    // come out orthonormal with descending variances
    let proj = q.transpose() * &d; // M × N
    let small = (&proj * proj.transpose()) / (n - 1) as f64;
    let eig2 = small.symmetric_eigen();
    let m = eig2.eigenvalues.len();
    let mut order2: Vec<usize> = (0..m).collect();
    order2.sort_by(|&a, &b| eig2.eigenvalues[b].partial_cmp(&eig2.eigenvalues[a]).unwrap());

    let mut modes = DMatrix::<f64>::zeros(dim, m);
    let mut variances = DVector::<f64>::zeros(m);
    for (c, &k) in order2.iter().enumerate() {
        modes.set_column(c, &(&q * eig2.eigenvectors.column(k)));
        variances[c] = eig2.eigenvalues[k].max(0.0);
    }

    Ok(ShapeModel {
        mean,
        modes,
        variances,
        topology: set.topology.clone(),
        landmark_indices: set.landmark_indices.clone(),
        landmark_weight,
    })
}

/// Instantiates the surface for mode coefficients `b` (length at most the
/// number of modes; missing trailing coefficients are zero).
pub fn synthesize(model: &ShapeModel, b: &DVector<f64>) -> TriMesh {
    assert!(b.len() <= model.n_modes(), "too many coefficients");
    let mut x = model.mean.clone();
    if b.len() > 0 {
        x += model.modes.columns(0, b.len()) * b;
    }
    TriMesh { vertices: vector_to_points(&x), triangles: model.topology.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_bone_at, BoneParams};
    use std::collections::BTreeMap;

    fn scaled(m: &TriMesh, s: f64) -> TriMesh {
        TriMesh {
            vertices: m.vertices.iter().map(|p| Point3::from(p.coords * s)).collect(),
            triangles: m.triangles.clone(),
        }
    }

    fn template() -> TriMesh {
        generate_bone_at(&BoneParams::default_femur(), 5.0).unwrap().0
    }

    fn toy_set() -> CorrespondenceSet {
        // three scaled copies of one coarse femur, exact correspondence
        let t = template();
        CorrespondenceSet {
            topology: t.triangles.clone(),
            shapes: vec![
                t.vertices.clone(),
                scaled(&t, 1.05).vertices,
                scaled(&t, 0.95).vertices,
            ],
            landmark_indices: BTreeMap::new(),
        }
    }

    #[test]
    fn scaled_template_correspondence_is_exact() {
        let t = template();
        let target = scaled(&t, 1.1);
        let meshes = vec![target.clone(), target.clone(), target.clone()];
        let set = build_reference(&t, &meshes).unwrap();
        assert_eq!(set.n_shapes(), 3);
        assert_eq!(set.n_vertices(), t.vertices.len());
        let worst = set.shapes[0]
            .iter()
            .zip(&target.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(worst < 0.1, "worst correspondence error {worst}");
    }

    #[test]
    fn two_shapes_give_one_mode_and_midpoint_mean() {
        let t = template();
        let set = CorrespondenceSet {
            topology: t.triangles.clone(),
            shapes: vec![t.vertices.clone(), scaled(&t, 1.1).vertices],
            landmark_indices: BTreeMap::new(),
        };
        let model = pca_build(&set, 0.0).unwrap();
        assert_eq!(model.n_modes(), 1);
        // mean is the Procrustes midpoint: scaling by 1.05 about the
        // centroid (rigid alignment matches centroids, not the origin)
        let c = t.centroid();
        let mid_pts: Vec<Point3<f64>> =
            t.vertices.iter().map(|p| c + 1.05 * (p - c)).collect();
        let mid = points_to_vector(&mid_pts);
        assert!((model.mean - mid).amax() < 1e-6);
    }

    #[test]
    fn identical_shapes_have_vanishing_variance() {
        let t = template();
        let set = CorrespondenceSet {
            topology: t.triangles.clone(),
            shapes: vec![t.vertices.clone(); 4],
            landmark_indices: BTreeMap::new(),
        };
        let model = pca_build(&set, 0.0).unwrap();
        for i in 0..model.n_modes() {
            assert!(model.variances[i] < 1e-12);
        }
    }

    #[test]
    fn synthesize_project_round_trip() {
        let model = pca_build(&toy_set(), 0.0).unwrap();
        assert!(model.n_modes() >= 1);
        let mut b = DVector::zeros(model.n_modes());
        for (i, bi) in b.iter_mut().enumerate() {
            *bi = model.variances[i].sqrt() * if i % 2 == 0 { 1.0 } else { -0.7 };
        }
        let mesh = synthesize(&model, &b);
        let back = model.project(&mesh.vertices);
        assert!((back - b).amax() < 1e-6);
    }

    #[test]
    fn modes_are_orthonormal_and_variances_descend() {
        let model = pca_build(&toy_set(), 0.0).unwrap();
        let gram = model.modes.transpose() * &model.modes;
        let eye = DMatrix::<f64>::identity(model.n_modes(), model.n_modes());
        assert!((gram - eye).amax() < 1e-9);
        for i in 1..model.n_modes() {
            assert!(model.variances[i] <= model.variances[i - 1] + 1e-12);
        }
    }

    #[test]
    fn augmentation_preserves_full_rank_reconstruction() {
        let t = template();
        let mut set = toy_set();
        // pick a few arbitrary landmark vertices
        let lms: BTreeMap<String, Point3<f64>> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), t.vertices[i * 100]))
            .collect();
        set.assign_landmarks(&t.vertices, &lms);
        let plain = pca_build(&set, 0.0).unwrap();
        let heavy = pca_build(&set, 25.0).unwrap();
        assert_eq!(plain.n_modes(), heavy.n_modes());
        // at full rank the retained subspace is identical, so both models
        // reconstruct the same surface even though mode bases differ
        let probe = scaled(&t, 1.02);
        let rp = &plain.mean + &plain.modes * plain.project(&probe.vertices);
        let rh = &heavy.mean + &heavy.modes * heavy.project(&probe.vertices);
        assert!((rp - rh).amax() < 1e-6);
    }
}
