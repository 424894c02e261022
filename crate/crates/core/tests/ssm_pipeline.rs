//! End-to-end shape-model workflow on a synthetic femur population:
//! correspondence, PCA, serialization, and partial-data fitting.

use nalgebra::{Point3, Rotation3, Vector3};
use okplan_core::geometry::{TriBvh, TriMesh};
use okplan_core::ssm::{
    build_reference, compactness, fit_partial, pca_build, read_model_file, write_model_file,
    FitOptions,
};
use okplan_core::synth::{
    crop_extremities, generate_bone_at, sample_population, BoneKind, BoneParams,
};

#[test]
fn femur_population_model_fits_partial_data() {
    let (template, template_truth) =
        generate_bone_at(&BoneParams::default_femur(), 4.5).unwrap();
    let pop = sample_population(BoneKind::Femur, 6, 42, 3).unwrap();
    let meshes: Vec<TriMesh> = pop.iter().map(|c| c.mesh.clone()).collect();

    let mut set = build_reference(&template, &meshes).unwrap();
    assert_eq!(set.n_shapes(), 6);
    assert_eq!(set.n_vertices(), template.vertices.len());
    set.assign_landmarks(&template.vertices, &template_truth.landmarks);
    assert!(set.landmark_indices.contains_key("Medial Epicondyle"));

    let model = pca_build(&set, 10.0).unwrap();
    assert!(model.n_modes() >= 3 && model.n_modes() <= 5);
    let c = compactness(&model);
    assert!((c.last().unwrap() - 1.0).abs() < 1e-9);

    // serialization round trip
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("femur.ossm");
    write_model_file(&path, &model).unwrap();
    let reloaded = read_model_file(&path).unwrap();
    assert_eq!(reloaded.mean, model.mean);
    assert_eq!(reloaded.landmark_indices, model.landmark_indices);

    // partial data: extremity crops of a training case, arbitrarily posed
    let case = &pop[0];
    let partial = crop_extremities(&case.mesh, 0.25, 0.2);
    let rot = Rotation3::from_euler_angles(0.4, -0.7, 1.1);
    let posed = TriMesh {
        vertices: partial
            .vertices
            .iter()
            .map(|p| rot * p + Vector3::new(-120.0, 80.0, 35.0))
            .collect(),
        triangles: partial.triangles.clone(),
    };

    let fit = fit_partial(&model, &posed, &FitOptions::default()).unwrap();
    assert!(fit.residual_rmse < 2.5, "residual rmse {}", fit.residual_rmse);

    // landmark vertices of the fitted surface, mapped back into the posed
    // patient frame, should land close to the generative truth
    let inv = fit.transform.inverse();
    for label in ["Medial Epicondyle", "Lateral Epicondyle", "Top Notch"] {
        let idx = model.landmark_indices[label] as usize;
        let in_patient = inv.apply(&fit.fitted_mesh.vertices[idx]);
        let truth_posed: Point3<f64> =
            rot * case.truth.landmarks[label] + Vector3::new(-120.0, 80.0, 35.0);
        let err = (in_patient - truth_posed).norm();
        assert!(err < 5.0, "{label}: landmark error {err:.2} mm");
    }

    // residual of the registered partial points against the fitted surface
    // should agree with the reported value
    let bvh = TriBvh::build(&fit.fitted_mesh);
    let mut ss = 0.0;
    for p in &posed.vertices {
        let d = bvh.closest_point(&fit.transform.apply(p)).0;
        ss += d * d;
    }
    let rmse = (ss / posed.vertices.len() as f64).sqrt();
    assert!(rmse < 2.5, "recomputed rmse {rmse}");
}
