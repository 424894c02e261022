//! Staged case execution: `volume` → `geometry` → `fit` → `morphometry`
//! → `implant`.
//!
//! Each stage persists its products to the case output directory, and
//! every stage can reload its inputs from the previous stage's artifacts,
//! so `run_case` may start at any stage of a previously processed case
//! and reproduce the downstream outputs exactly. Left knees are mirrored
//! across the sagittal plane into the right-side frame ahead of shape
//! model fitting (the models are right-sided); landmarks and components
//! are mirrored back before they are written.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Point2, Point3, Vector2};
use okplan_core::geometry::{taubin_smooth, write_stl_file, Plane, RigidTransform, TriMesh};
use okplan_core::implant::{
    arcs_beyond_line, compute_resections, design_femoral, design_insert, design_tibial,
    flatten_contours, flatten_contours_multi, over_under_hang, validity_check, ContourPair,
    FemoralDesignParams, HangProfile, ImplantComponent, InsertParams, ResectionConfig,
    TibialDesignParams, ValidityConfig, ValidityReport,
};
use okplan_core::morphometry::{
    adjust_to_mesh, default_femoral_registry, default_tibial_registry, eval_graph,
    femoral_core_chain, propagate_primary, tibial_core_chain, EvalContext, FemoralCoreConfig,
    ParamOutcome, ParamRegistry, ParamValue, Provenance, TibialCoreConfig,
};
use okplan_core::ssm::{fit_partial, read_model_file, FitOptions, FitResult, ShapeModel};
use okplan_core::volume::{
    largest_component, marching_cubes, morph_close, morph_open, read_nrrd_file, write_nrrd_file,
    LabelVolume, StructuringElement,
};

use crate::artifacts;
use crate::config::{CaseConfig, DesignParams};
use crate::report::{CaseReport, ComponentSummary, Failure, HangSummary, StageTiming};
use crate::PipelineError;

/// Stage names in execution order.
pub const STAGES: [&str; 5] = ["volume", "geometry", "fit", "morphometry", "implant"];

pub fn stage_index(name: &str) -> Option<usize> {
    STAGES.iter().position(|s| *s == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bone {
    Femur,
    Tibia,
}

pub const BONES: [Bone; 2] = [Bone::Femur, Bone::Tibia];

impl Bone {
    pub fn name(&self) -> &'static str {
        match self {
            Bone::Femur => "femur",
            Bone::Tibia => "tibia",
        }
    }
}

/// Artifact locations inside a case output directory.
pub struct CasePaths {
    pub out: PathBuf,
}

impl CasePaths {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }

    pub fn seg(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_seg.nrrd", bone.name()))
    }

    pub fn mesh(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_mesh.txt", bone.name()))
    }

    pub fn mesh_stl(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_mesh.stl", bone.name()))
    }

    pub fn fit(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_fit.txt", bone.name()))
    }

    /// Model-frame fitted surface, full precision.
    pub fn fitted(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_fitted.txt", bone.name()))
    }

    /// Patient-frame fitted surface for viewing.
    pub fn fitted_stl(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_fitted.stl", bone.name()))
    }

    pub fn landmarks(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_landmarks.txt", bone.name()))
    }

    pub fn morph_table(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_morph.txt", bone.name()))
    }

    pub fn registry_table(&self, bone: Bone) -> PathBuf {
        self.out.join(format!("{}_registry.txt", bone.name()))
    }

    pub fn implants(&self) -> PathBuf {
        self.out.join("implants")
    }

    pub fn hang(&self, name: &str) -> PathBuf {
        self.out.join(format!("hang_{name}.txt"))
    }

    pub fn report_text(&self) -> PathBuf {
        self.out.join("report.txt")
    }

    pub fn report_json(&self) -> PathBuf {
        self.out.join("report.json")
    }

    pub fn metrics_text(&self) -> PathBuf {
        self.out.join("metrics.txt")
    }

    pub fn metrics_json(&self) -> PathBuf {
        self.out.join("metrics.json")
    }
}

#[derive(Default)]
struct BoneState {
    seg: Option<LabelVolume>,
    /// Smoothed segmented surface, patient frame.
    mesh: Option<TriMesh>,
    model: Option<ShapeModel>,
    /// Fit computed in the work (right-side) frame.
    fit: Option<FitResult>,
    /// Adjusted landmarks in the work frame.
    landmarks: Option<BTreeMap<String, Point3<f64>>>,
}

#[derive(Default)]
struct State {
    femur: BoneState,
    tibia: BoneState,
}

impl State {
    fn bone(&mut self, b: Bone) -> &mut BoneState {
        match b {
            Bone::Femur => &mut self.femur,
            Bone::Tibia => &mut self.tibia,
        }
    }
}

fn stage_err(stage: &'static str, e: impl Display) -> PipelineError {
    PipelineError::Stage { stage, reason: e.to_string() }
}

fn mirror_point(p: &Point3<f64>) -> Point3<f64> {
    Point3::new(-p.x, p.y, p.z)
}

fn mirror_landmarks(lm: &BTreeMap<String, Point3<f64>>) -> BTreeMap<String, Point3<f64>> {
    lm.iter().map(|(k, p)| (k.clone(), mirror_point(p))).collect()
}

/// Conjugates a component by the sagittal mirror: the local mesh is
/// mirrored and the frame adjusted so the patient-frame placement is the
/// mirror image of the right-side placement, with a proper rotation.
fn mirror_component(c: &ImplantComponent) -> ImplantComponent {
    let m = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, 1.0, 1.0));
    let f = &c.frame;
    ImplantComponent {
        kind: c.kind,
        mesh: c.mesh.mirrored_x(),
        frame: RigidTransform::new(
            m * f.rotation * m,
            nalgebra::Vector3::new(-f.translation.x, f.translation.y, f.translation.z),
            f.scale,
        ),
    }
}

fn femoral_params(d: &DesignParams) -> FemoralDesignParams {
    let mut p = FemoralDesignParams::default();
    if let Some(v) = d.medial_slope {
        p.medial_radius_fn.slope = v;
    }
    if let Some(v) = d.medial_intercept {
        p.medial_radius_fn.intercept = v;
    }
    if let Some(v) = d.lateral_slope {
        p.lateral_radius_fn.slope = v;
    }
    if let Some(v) = d.lateral_intercept {
        p.lateral_radius_fn.intercept = v;
    }
    if let Some(v) = d.femoral_spacing {
        p.mesh_spacing = v;
    }
    p
}

fn tibial_params(d: &DesignParams) -> TibialDesignParams {
    let mut p = TibialDesignParams::default();
    if let Some(v) = d.rim_margin {
        p.rim_margin = v;
    }
    if let Some(v) = d.plate_thickness {
        p.plate_thickness = v;
    }
    if let Some(v) = d.tibial_spacing {
        p.mesh_spacing = v;
    }
    p
}

fn insert_params(d: &DesignParams) -> InsertParams {
    let mut p = InsertParams::default();
    if let Some(v) = d.insert_thickness {
        p.thickness = v;
    }
    if let Some(v) = d.clearance {
        p.clearance = v;
    }
    if let Some(v) = d.socket_depth {
        p.socket_depth = v;
    }
    if let Some(v) = d.insert_spacing {
        p.mesh_spacing = v;
    }
    p
}

/// Runs the stages from `start` through `stop` (inclusive, by name),
/// loading anything earlier from persisted artifacts. A stage failure is
/// recorded in the returned report, not raised; only configuration
/// problems (bad stage names, missing output directory) error out.
pub fn run_case(cfg: &CaseConfig, start: &str, stop: &str) -> Result<CaseReport, PipelineError> {
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| PipelineError::Config("no output directory configured".into()))?;
    let start_i = stage_index(start)
        .ok_or_else(|| PipelineError::Config(format!("unknown stage '{start}'")))?;
    let stop_i = stage_index(stop)
        .ok_or_else(|| PipelineError::Config(format!("unknown stage '{stop}'")))?;
    if start_i > stop_i {
        return Err(PipelineError::Config(format!(
            "start stage '{start}' comes after stop stage '{stop}'"
        )));
    }
    std::fs::create_dir_all(&out)
        .map_err(|e| PipelineError::Config(format!("cannot create {}: {e}", out.display())))?;

    let paths = CasePaths::new(&out);
    let mut report = CaseReport::new(cfg.side.name(), cfg.seed);
    let mut st = State::default();

    for &stage in &STAGES[start_i..=stop_i] {
        let t0 = Instant::now();
        let result = match stage {
            "volume" => stage_volume(cfg, &paths, &mut st),
            "geometry" => stage_geometry(cfg, &paths, &mut st),
            "fit" => stage_fit(cfg, &paths, &mut st, &mut report),
            "morphometry" => stage_morphometry(cfg, &paths, &mut st, &mut report),
            "implant" => stage_implant(cfg, &paths, &mut st, &mut report),
            _ => unreachable!(),
        };
        report
            .timings
            .push(StageTiming { stage: stage.to_string(), seconds: t0.elapsed().as_secs_f64() });
        if let Err(e) = result {
            let reason = match &e {
                PipelineError::Stage { reason, .. } => reason.clone(),
                other => other.to_string(),
            };
            report.failure = Some(Failure { stage: stage.to_string(), reason });
            break;
        }
    }

    std::fs::write(paths.report_text(), report.to_text())?;
    std::fs::write(paths.report_json(), report.to_json())?;
    Ok(report)
}

// ---------------------------------------------------------------- volume

fn stage_volume(cfg: &CaseConfig, paths: &CasePaths, st: &mut State) -> Result<(), PipelineError> {
    const STAGE: &str = "volume";
    for bone in BONES {
        let (input, label) = match bone {
            Bone::Femur => (&cfg.femur_volume, cfg.femur_label),
            Bone::Tibia => (&cfg.tibia_volume, cfg.tibia_label),
        };
        let input = input.as_ref().ok_or_else(|| {
            stage_err(STAGE, format!("no input volume configured for the {}", bone.name()))
        })?;
        let mut v = read_nrrd_file(input).map_err(|e| stage_err(STAGE, e))?;
        if cfg.post.open_radius > 0 {
            v = morph_open(&v, label, &StructuringElement::ball(cfg.post.open_radius));
        }
        if cfg.post.close_radius > 0 {
            v = morph_close(&v, label, &StructuringElement::ball(cfg.post.close_radius));
        }
        v = largest_component(&v, label);
        write_nrrd_file(&paths.seg(bone), &v).map_err(|e| stage_err(STAGE, e))?;
        st.bone(bone).seg = Some(v);
    }
    Ok(())
}

// -------------------------------------------------------------- geometry

fn ensure_seg(
    cfg: &CaseConfig,
    paths: &CasePaths,
    st: &mut State,
    bone: Bone,
    stage: &'static str,
) -> Result<(), PipelineError> {
    if st.bone(bone).seg.is_none() {
        let v = read_nrrd_file(&paths.seg(bone)).map_err(|e| stage_err(stage, e))?;
        st.bone(bone).seg = Some(v);
    }
    let _ = cfg;
    Ok(())
}

fn stage_geometry(
    cfg: &CaseConfig,
    paths: &CasePaths,
    st: &mut State,
) -> Result<(), PipelineError> {
    const STAGE: &str = "geometry";
    for bone in BONES {
        ensure_seg(cfg, paths, st, bone, STAGE)?;
        let label = match bone {
            Bone::Femur => cfg.femur_label,
            Bone::Tibia => cfg.tibia_label,
        };
        let v = st.bone(bone).seg.as_ref().unwrap();
        let mut mesh = marching_cubes(v, label).map_err(|e| stage_err(STAGE, e))?;
        if cfg.post.smooth_iterations > 0 {
            mesh = taubin_smooth(
                &mesh,
                cfg.post.smooth_iterations,
                cfg.post.smooth_lambda,
                cfg.post.smooth_mu,
            );
        }
        artifacts::write_mesh(&paths.mesh(bone), &mesh)?;
        write_stl_file(&paths.mesh_stl(bone), &mesh).map_err(|e| stage_err(STAGE, e))?;
        st.bone(bone).mesh = Some(mesh);
    }
    Ok(())
}

// ------------------------------------------------------------------- fit

fn ensure_mesh(
    paths: &CasePaths,
    st: &mut State,
    bone: Bone,
    stage: &'static str,
) -> Result<(), PipelineError> {
    if st.bone(bone).mesh.is_none() {
        let mesh = artifacts::read_mesh(&paths.mesh(bone)).map_err(|e| stage_err(stage, e))?;
        st.bone(bone).mesh = Some(mesh);
    }
    Ok(())
}

fn ensure_model(
    cfg: &CaseConfig,
    st: &mut State,
    bone: Bone,
    stage: &'static str,
) -> Result<(), PipelineError> {
    if st.bone(bone).model.is_none() {
        let path = match bone {
            Bone::Femur => &cfg.femur_model,
            Bone::Tibia => &cfg.tibia_model,
        };
        let path = path.as_ref().ok_or_else(|| {
            stage_err(stage, format!("no shape model configured for the {}", bone.name()))
        })?;
        let model = read_model_file(path)
            .map_err(|e| stage_err(stage, format!("{}: {e}", path.display())))?;
        st.bone(bone).model = Some(model);
    }
    Ok(())
}

/// Segmented surface in the work frame (right-side): mirrored for left
/// knees, as-is for right.
fn work_mesh(cfg: &CaseConfig, st: &mut State, bone: Bone) -> TriMesh {
    let mesh = st.bone(bone).mesh.as_ref().expect("mesh ensured");
    if cfg.side.is_left() {
        mesh.mirrored_x()
    } else {
        mesh.clone()
    }
}

fn stage_fit(
    cfg: &CaseConfig,
    paths: &CasePaths,
    st: &mut State,
    report: &mut CaseReport,
) -> Result<(), PipelineError> {
    const STAGE: &str = "fit";
    for bone in BONES {
        ensure_mesh(paths, st, bone, STAGE)?;
        ensure_model(cfg, st, bone, STAGE)?;
        let work = work_mesh(cfg, st, bone);
        let opts = FitOptions {
            modes: cfg.fit.modes,
            lambda_reg: cfg.fit.lambda_reg,
            span_prior: cfg.fit.span_prior,
            max_iters: cfg.fit.max_iters,
            relax: cfg.fit.relax,
            ..FitOptions::default()
        };
        let model = st.bone(bone).model.as_ref().unwrap();
        let fit = fit_partial(model, &work, &opts).map_err(|e| stage_err(STAGE, e))?;

        artifacts::write_fit(&paths.fit(bone), &fit)?;
        artifacts::write_mesh(&paths.fitted(bone), &fit.fitted_mesh)?;
        let mut patient_fitted = fit.fitted_mesh.transformed(&fit.transform.inverse());
        if cfg.side.is_left() {
            patient_fitted = patient_fitted.mirrored_x();
        }
        write_stl_file(&paths.fitted_stl(bone), &patient_fitted)
            .map_err(|e| stage_err(STAGE, e))?;

        report.fit_residuals.insert(bone.name().to_string(), fit.residual_rmse);
        report
            .metrics
            .insert(format!("{} fit residual rmse", bone.name()), fit.residual_rmse);
        st.bone(bone).fit = Some(fit);
    }
    Ok(())
}

// ------------------------------------------------------------ morphometry

fn ensure_fit(
    cfg: &CaseConfig,
    paths: &CasePaths,
    st: &mut State,
    bone: Bone,
    stage: &'static str,
) -> Result<(), PipelineError> {
    ensure_model(cfg, st, bone, stage)?;
    if st.bone(bone).fit.is_none() {
        let fitted = artifacts::read_mesh(&paths.fitted(bone)).map_err(|e| stage_err(stage, e))?;
        let fit = artifacts::read_fit(&paths.fit(bone), fitted).map_err(|e| stage_err(stage, e))?;
        st.bone(bone).fit = Some(fit);
    }
    Ok(())
}

fn prov_name(p: Provenance) -> &'static str {
    match p {
        Provenance::SsmInherited => "ssm",
        Provenance::MeshAdjusted => "adjusted",
        Provenance::Derived => "derived",
    }
}

fn format_value(v: &ParamValue) -> String {
    match v {
        ParamValue::Point(p) => format!("point {:.4} {:.4} {:.4}", p.x, p.y, p.z),
        ParamValue::Axis(a) => {
            let d = a.direction.into_inner();
            format!(
                "axis {:.4} {:.4} {:.4} dir {:.6} {:.6} {:.6}",
                a.point.x, a.point.y, a.point.z, d.x, d.y, d.z
            )
        }
        ParamValue::Plane(p) => {
            let n = p.normal.into_inner();
            format!(
                "plane {:.4} {:.4} {:.4} normal {:.6} {:.6} {:.6}",
                p.point.x, p.point.y, p.point.z, n.x, n.y, n.z
            )
        }
        ParamValue::Sphere(s) => format!(
            "sphere {:.4} {:.4} {:.4} r {:.4}",
            s.center.x, s.center.y, s.center.z, s.radius
        ),
        ParamValue::PointSet(ps) => format!("points n={}", ps.len()),
        ParamValue::Length(l) => format!("length {l:.4}"),
        ParamValue::Angle(a) => format!("angle {a:.4}"),
    }
}

fn write_outcome_table(
    path: &Path,
    entries: &BTreeMap<String, ParamOutcome>,
) -> Result<(), PipelineError> {
    let mut out = String::new();
    for (name, outcome) in entries {
        let line = match outcome {
            ParamOutcome::Value(v, prov) => {
                format!("{name} = {} [{}]\n", format_value(v), prov_name(*prov))
            }
            ParamOutcome::Failed(reason) => format!("{name} = failed: {reason}\n"),
        };
        out.push_str(&line);
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn stage_morphometry(
    cfg: &CaseConfig,
    paths: &CasePaths,
    st: &mut State,
    report: &mut CaseReport,
) -> Result<(), PipelineError> {
    const STAGE: &str = "morphometry";
    let custom_registry = match &cfg.registry {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| stage_err(STAGE, format!("{}: {e}", path.display())))?;
            Some(ParamRegistry::from_text(&text).map_err(|e| stage_err(STAGE, e))?)
        }
        None => None,
    };

    for bone in BONES {
        ensure_mesh(paths, st, bone, STAGE)?;
        ensure_fit(cfg, paths, st, bone, STAGE)?;
        let work_seg = work_mesh(cfg, st, bone);
        let bs = st.bone(bone);
        let fit = bs.fit.as_ref().unwrap();
        let model = bs.model.as_ref().unwrap();

        // propagation happens in the frame the fit was computed in (the
        // work frame), so the "patient frame" of propagate_primary is the
        // work frame here
        let propagated = propagate_primary(fit, model).map_err(|e| stage_err(STAGE, e))?;

        // per-landmark adjustment weights come from the built-in registry
        // of the bone; labels without a registry entry stay propagated
        let registry = match bone {
            Bone::Femur => default_femoral_registry(cfg.resect.distal_depth),
            Bone::Tibia => default_tibial_registry(cfg.resect.tibial_depth),
        };
        let weights: BTreeMap<&str, f64> =
            registry.primaries().map(|s| (s.name.as_str(), s.weight)).collect();
        let mut adjusted = BTreeMap::new();
        for (label, p) in &propagated {
            let w = weights.get(label.as_str()).copied().unwrap_or(1.0);
            let q = adjust_to_mesh(p, &work_seg, w).map_err(|e| stage_err(STAGE, e))?;
            adjusted.insert(label.clone(), q);
        }

        // run the bone's derivation chain for the morphometric table
        let entries = match bone {
            Bone::Femur => {
                let core = femoral_core_chain(
                    &adjusted,
                    &work_seg,
                    &FemoralCoreConfig { distal_resection_depth: cfg.resect.distal_depth },
                )
                .map_err(|e| stage_err(STAGE, e))?;
                report.metrics.insert("femur ap size".into(), core.ap_size);
                report
                    .metrics
                    .insert("femur epicondylar width".into(), core.epicondylar_width);
                report.metrics.insert("femur head radius".into(), core.head_radius);
                core.result.entries
            }
            Bone::Tibia => {
                let core = tibial_core_chain(
                    &adjusted,
                    &work_seg,
                    &TibialCoreConfig {
                        resection_depth: cfg.resect.tibial_depth,
                        posterior_slope_deg: cfg.resect.posterior_slope,
                    },
                )
                .map_err(|e| stage_err(STAGE, e))?;
                core.result.entries
            }
        };
        write_outcome_table(&paths.morph_table(bone), &entries)?;

        // echo a user-supplied registry against the same primaries
        if let Some(reg) = &custom_registry {
            let fitted_work = {
                let f = st.bone(bone).fit.as_ref().unwrap();
                f.fitted_mesh.transformed(&f.transform.inverse())
            };
            let wrapped: BTreeMap<String, (ParamValue, Provenance)> = adjusted
                .iter()
                .map(|(k, p)| (k.clone(), (ParamValue::Point(*p), Provenance::MeshAdjusted)))
                .collect();
            let ctx = EvalContext { fitted: Some(&fitted_work), segmented: Some(&work_seg) };
            let result = eval_graph(reg, &wrapped, &ctx);
            write_outcome_table(&paths.registry_table(bone), &result.entries)?;
        }

        // persist and report in the true patient frame
        let patient = if cfg.side.is_left() { mirror_landmarks(&adjusted) } else { adjusted.clone() };
        artifacts::write_landmarks(&paths.landmarks(bone), &patient)?;
        for (label, p) in &patient {
            report
                .landmarks
                .insert(format!("{} / {label}", bone.name()), [p.x, p.y, p.z]);
        }
        st.bone(bone).landmarks = Some(adjusted);
    }
    Ok(())
}

// ---------------------------------------------------------------- implant

fn ensure_landmarks(
    cfg: &CaseConfig,
    paths: &CasePaths,
    st: &mut State,
    bone: Bone,
    stage: &'static str,
) -> Result<(), PipelineError> {
    if st.bone(bone).landmarks.is_none() {
        let patient =
            artifacts::read_landmarks(&paths.landmarks(bone)).map_err(|e| stage_err(stage, e))?;
        let work = if cfg.side.is_left() { mirror_landmarks(&patient) } else { patient };
        st.bone(bone).landmarks = Some(work);
    }
    Ok(())
}

fn hang_summary(name: &str, hang: &HangProfile) -> HangSummary {
    let max_over = hang.profile.iter().map(|&(_, d)| d).fold(0.0f64, f64::max);
    let max_under = hang.profile.iter().map(|&(_, d)| -d).fold(0.0f64, f64::max);
    HangSummary {
        name: name.to_string(),
        rmse: hang.rmse,
        hausdorff: hang.hausdorff,
        max_overhang: max_over,
        max_underhang: max_under,
        samples: hang.profile.len(),
    }
}

fn write_hang_profile(path: &Path, hang: &HangProfile) -> Result<(), PipelineError> {
    let mut out = format!("rmse = {}\nhausdorff = {}\n", hang.rmse, hang.hausdorff);
    for (t, d) in &hang.profile {
        out.push_str(&format!("{t} {d}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn component_summary(name: &str, report: &ValidityReport) -> ComponentSummary {
    ComponentSummary {
        name: name.to_string(),
        watertight: report.watertight,
        self_intersections: report.self_intersections,
        volume: report.volume,
        min_wall_thickness: report.min_wall_thickness,
        pass: report.pass(),
    }
}

/// Posterior straight-cut arcs of the baseplate contour, excluded from the
/// coverage metric since the cut-off is deliberate.
fn tibial_excluded_arcs(
    pair: &ContourPair,
    plane: &Plane,
    ap: &nalgebra::Vector3<f64>,
) -> Vec<(f64, f64)> {
    let implant = pair.implant.canonical();
    let (e1, e2) = plane.basis();
    let post = Vector2::new(-ap.dot(&e1), -ap.dot(&e2)).normalize();
    let s_max =
        implant.points.iter().map(|p| post.dot(&p.coords)).fold(f64::NEG_INFINITY, f64::max);
    let line_pt = Point2::from(post * (s_max - 0.5));
    arcs_beyond_line(&implant, line_pt, post, 0.0)
}

fn stage_implant(
    cfg: &CaseConfig,
    paths: &CasePaths,
    st: &mut State,
    report: &mut CaseReport,
) -> Result<(), PipelineError> {
    const STAGE: &str = "implant";
    for bone in BONES {
        ensure_mesh(paths, st, bone, STAGE)?;
        ensure_landmarks(cfg, paths, st, bone, STAGE)?;
    }
    ensure_fit(cfg, paths, st, Bone::Femur, STAGE)?;

    let femur_work = work_mesh(cfg, st, Bone::Femur);
    let tibia_work = work_mesh(cfg, st, Bone::Tibia);
    let fem_lm = st.femur.landmarks.clone().unwrap();
    let tib_lm = st.tibia.landmarks.clone().unwrap();

    let fc = femoral_core_chain(
        &fem_lm,
        &femur_work,
        &FemoralCoreConfig { distal_resection_depth: cfg.resect.distal_depth },
    )
    .map_err(|e| stage_err(STAGE, e))?;
    let tc = tibial_core_chain(
        &tib_lm,
        &tibia_work,
        &TibialCoreConfig {
            resection_depth: cfg.resect.tibial_depth,
            posterior_slope_deg: cfg.resect.posterior_slope,
        },
    )
    .map_err(|e| stage_err(STAGE, e))?;
    let res = compute_resections(
        &fc,
        &tc,
        &femur_work,
        &ResectionConfig {
            chamfer_angle_deg: cfg.resect.chamfer_angle,
            chamfer_width: cfg.resect.chamfer_width,
            posterior_offset: cfg.resect.posterior_offset,
            anterior_band: cfg.resect.anterior_band,
        },
    )
    .map_err(|e| stage_err(STAGE, e))?;

    // premorbid shape estimate for the flange: the fitted model surface in
    // the work frame
    let premorbid = {
        let fit = st.femur.fit.as_ref().unwrap();
        fit.fitted_mesh.transformed(&fit.transform.inverse())
    };

    let fem_params = femoral_params(&cfg.design);
    let tib_params = tibial_params(&cfg.design);
    let ins_params = insert_params(&cfg.design);
    let femoral =
        design_femoral(&fc, &premorbid, &res, &fem_params).map_err(|e| stage_err(STAGE, e))?;
    let tibial = design_tibial(&tc, &tibia_work, &tib_params).map_err(|e| stage_err(STAGE, e))?;
    let insert = design_insert(&femoral, &tibial, &fc, &tc, &ins_params)
        .map_err(|e| stage_err(STAGE, e))?;

    let vcfg = ValidityConfig::default();
    let implants_dir = paths.implants();
    let echo = |pairs: &[(&str, f64)]| -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    };
    let all = [
        ("femoral", &femoral, echo(&[
            ("medial_slope", fem_params.medial_radius_fn.slope),
            ("medial_intercept", fem_params.medial_radius_fn.intercept),
            ("lateral_slope", fem_params.lateral_radius_fn.slope),
            ("lateral_intercept", fem_params.lateral_radius_fn.intercept),
            ("flange_offset", fem_params.flange_offset),
            ("mesh_spacing", fem_params.mesh_spacing),
        ])),
        ("tibial", &tibial, echo(&[
            ("rim_margin", tib_params.rim_margin),
            ("plate_thickness", tib_params.plate_thickness),
            ("mesh_spacing", tib_params.mesh_spacing),
        ])),
        ("insert", &insert, echo(&[
            ("thickness", ins_params.thickness),
            ("clearance", ins_params.clearance),
            ("socket_depth", ins_params.socket_depth),
            ("mesh_spacing", ins_params.mesh_spacing),
        ])),
    ];
    for (name, component, params) in &all {
        let vreport = validity_check(component, &vcfg);
        let exported =
            if cfg.side.is_left() { mirror_component(component) } else { (*component).clone() };
        okplan_core::implant::export_component(&implants_dir, name, &exported, params, &vreport)
            .map_err(|e| stage_err(STAGE, e))?;
        report.components.push(component_summary(name, &vreport));
    }

    // contour fit: femoral profile unfolded over the cut planes, tibial
    // coverage on the resection plane with the posterior cut masked. The
    // anterior cut is tangent to the cortex, so its bone section is a
    // degenerate sliver; the profile starts at the anterior chamfer.
    let planes: Vec<Plane> =
        res.femoral_ordered().iter().skip(1).map(|p| (*p).clone()).collect();
    let fem_pair = flatten_contours_multi(&femur_work, &femoral, &planes, &[])
        .map_err(|e| stage_err(STAGE, e))?;
    let fem_hang = over_under_hang(&fem_pair);
    write_hang_profile(&paths.hang("femoral"), &fem_hang)?;
    report.hang.push(hang_summary("femoral", &fem_hang));
    report.metrics.insert("femoral hang rmse".into(), fem_hang.rmse);

    let plane = &tc.resection_plane;
    let pair0 =
        flatten_contours(&tibia_work, &tibial, plane, &[]).map_err(|e| stage_err(STAGE, e))?;
    let arcs = tibial_excluded_arcs(&pair0, plane, &tc.ap_direction.into_inner());
    let tib_pair =
        flatten_contours(&tibia_work, &tibial, plane, &arcs).map_err(|e| stage_err(STAGE, e))?;
    let tib_hang = over_under_hang(&tib_pair);
    write_hang_profile(&paths.hang("tibial"), &tib_hang)?;
    report.hang.push(hang_summary("tibial", &tib_hang));
    report.metrics.insert("tibial hang rmse".into(), tib_hang.rmse);

    Ok(())
}
