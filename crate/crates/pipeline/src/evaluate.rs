//! Evaluation of a processed case against reference data: segmentation
//! overlap, fitted-surface accuracy, landmark errors and the implant
//! contour-fit table.

use okplan_core::geometry::{hausdorff, read_ply_file, read_stl_file, surface_rmse, TriMesh};
use okplan_core::morphometry::landmark_error;
use okplan_core::volume::{dice, read_nrrd_file};

use crate::artifacts;
use crate::config::CaseConfig;
use crate::report::MetricsReport;
use crate::stages::{Bone, CasePaths, BONES};
use crate::PipelineError;

const SURFACE_SAMPLES: usize = 20_000;

fn fail(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage { stage: "evaluate", reason: e.to_string() }
}

fn read_reference_mesh(path: &std::path::Path) -> Result<TriMesh, PipelineError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "stl" => read_stl_file(path).map_err(fail),
        "ply" => read_ply_file(path).map_err(fail),
        _ => artifacts::read_mesh(path).map_err(fail),
    }
}

/// Fitted full-bone surface in the patient frame, reconstructed from the
/// fit artifacts.
fn fitted_patient(
    cfg: &CaseConfig,
    paths: &CasePaths,
    bone: Bone,
) -> Result<TriMesh, PipelineError> {
    let fitted = artifacts::read_mesh(&paths.fitted(bone)).map_err(fail)?;
    let fit = artifacts::read_fit(&paths.fit(bone), fitted).map_err(fail)?;
    let mut mesh = fit.fitted_mesh.transformed(&fit.transform.inverse());
    if cfg.side.is_left() {
        mesh = mesh.mirrored_x();
    }
    Ok(mesh)
}

/// Compares the case artifacts in the configured output directory with
/// the `[references]` section and writes `metrics.txt` / `metrics.json`
/// beside them. At least one reference must be supplied.
pub fn evaluate_case(cfg: &CaseConfig) -> Result<MetricsReport, PipelineError> {
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| PipelineError::Config("no output directory configured".into()))?;
    let paths = CasePaths::new(&out);
    let refs = &cfg.references;
    if refs.femur_volume.is_none()
        && refs.tibia_volume.is_none()
        && refs.femur_mesh.is_none()
        && refs.tibia_mesh.is_none()
        && refs.femur_landmarks.is_none()
        && refs.tibia_landmarks.is_none()
    {
        return Err(PipelineError::MissingReference(
            "the [references] section supplies no reference data".into(),
        ));
    }

    let mut report = MetricsReport::default();
    for bone in BONES {
        let (ref_volume, ref_mesh, ref_landmarks, label) = match bone {
            Bone::Femur => (
                &refs.femur_volume,
                &refs.femur_mesh,
                &refs.femur_landmarks,
                cfg.femur_label,
            ),
            Bone::Tibia => (
                &refs.tibia_volume,
                &refs.tibia_mesh,
                &refs.tibia_landmarks,
                cfg.tibia_label,
            ),
        };
        if let Some(path) = ref_volume {
            let seg = read_nrrd_file(&paths.seg(bone)).map_err(fail)?;
            let truth = read_nrrd_file(path).map_err(fail)?;
            let d = dice(&seg, &truth, label).map_err(fail)?;
            report.metrics.insert(format!("{} dice", bone.name()), d);
        }
        if let Some(path) = ref_mesh {
            let fitted = fitted_patient(cfg, &paths, bone)?;
            let truth = read_reference_mesh(path)?;
            let rmse = surface_rmse(&fitted, &truth, SURFACE_SAMPLES).map_err(fail)?;
            let hd = hausdorff(&fitted, &truth).map_err(fail)?;
            report.metrics.insert(format!("{} surface rmse", bone.name()), rmse);
            report.metrics.insert(format!("{} hausdorff", bone.name()), hd);
        }
        if let Some(path) = ref_landmarks {
            let computed = artifacts::read_landmarks(&paths.landmarks(bone)).map_err(fail)?;
            let truth = artifacts::read_landmarks(path).map_err(fail)?;
            let errors = landmark_error(&computed, &truth).map_err(fail)?;
            let mean = errors.values().sum::<f64>() / errors.len() as f64;
            report.metrics.insert(format!("{} landmark mean error", bone.name()), mean);
            let max = errors.values().cloned().fold(0.0f64, f64::max);
            report.metrics.insert(format!("{} landmark max error", bone.name()), max);
            report.landmark_errors.insert(bone.name().to_string(), errors);
        }
    }

    // carry the implant contour-fit numbers over from the case report
    if let Ok(text) = std::fs::read_to_string(paths.report_json()) {
        if let Ok(json) = serde_json::from_str::<serde_json::Value>(&text) {
            if let Some(hangs) = json.get("hang").and_then(|h| h.as_array()) {
                for h in hangs {
                    let (Some(name), Some(rmse), Some(hd)) = (
                        h.get("name").and_then(|v| v.as_str()),
                        h.get("rmse").and_then(|v| v.as_f64()),
                        h.get("hausdorff").and_then(|v| v.as_f64()),
                    ) else {
                        continue;
                    };
                    report.metrics.insert(format!("{name} hang rmse"), rmse);
                    report.metrics.insert(format!("{name} hang hausdorff"), hd);
                }
            }
        }
    }

    std::fs::write(paths.metrics_text(), report.to_text())?;
    std::fs::write(paths.metrics_json(), report.to_json())?;
    Ok(report)
}
