//! Shape-model building from a population manifest.
//!
//! The manifest is the structured-text file written by the `synth`
//! subcommand: one `[case i]` section per bone with the generative
//! parameters plus a `mesh = <path>` line. Cases are grouped by `bone`,
//! put into dense correspondence against the default-anatomy template of
//! that bone, and reduced to a shape model per group. The quality report
//! tabulates compactness, leave-one-out generality and specificity at
//! one mode, three modes, and full rank.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use okplan_core::geometry::{read_ply_file, read_stl_file, TriMesh};
use okplan_core::ssm::{
    build_reference, compactness, generality, pca_build, specificity, write_model_file,
};
use okplan_core::synth::{generate_bone_at, BoneParams, DEFAULT_MESH_SPACING};

use crate::artifacts;
use crate::PipelineError;

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Landmark augmentation weight of the PCA build.
    pub landmark_weight: f64,
    /// Grid spacing of the correspondence template, mm.
    pub template_spacing: f64,
    /// Random-sample count of the specificity estimate.
    pub specificity_samples: usize,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            landmark_weight: 10.0,
            template_spacing: DEFAULT_MESH_SPACING,
            specificity_samples: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QualityRow {
    pub modes: usize,
    /// Cumulative variance fraction captured by the first `modes` modes.
    pub compactness: f64,
    /// Leave-one-out reconstruction rmse, mm.
    pub generality: f64,
    /// Mean distance of model samples to the nearest training shape, mm.
    pub specificity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildReport {
    pub bone: String,
    pub n_shapes: usize,
    pub n_vertices: usize,
    pub n_modes: usize,
    pub rows: Vec<QualityRow>,
}

impl BuildReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} model: {} shapes, {} vertices, {} modes\n",
            self.bone, self.n_shapes, self.n_vertices, self.n_modes
        );
        out.push_str("modes  compactness  generality(mm)  specificity(mm)\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:>5}  {:>10.1}%  {:>14.3}  {:>15.3}\n",
                r.modes,
                100.0 * r.compactness,
                r.generality,
                r.specificity
            ));
        }
        out
    }
}

fn read_training_mesh(path: &Path) -> Result<TriMesh, PipelineError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let fail = |e: &dyn std::fmt::Display| PipelineError::Stage {
        stage: "build-ssm",
        reason: format!("{}: {e}", path.display()),
    };
    match ext {
        "stl" => read_stl_file(path).map_err(|e| fail(&e)),
        "ply" => read_ply_file(path).map_err(|e| fail(&e)),
        _ => artifacts::read_mesh(path).map_err(|e| fail(&e)),
    }
}

/// Parses `bone` and `mesh` out of every `[case i]` manifest section.
/// Relative mesh paths resolve against the manifest's directory.
fn parse_manifest(path: &Path) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cases: Vec<(Option<String>, Option<PathBuf>)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            cases.push((None, None));
            continue;
        }
        let Some((key, value)) = line.split_once('=') else { continue };
        let Some(last) = cases.last_mut() else {
            return Err(PipelineError::Config(format!(
                "{}: key before any [case] section",
                path.display()
            )));
        };
        match key.trim() {
            "bone" => last.0 = Some(value.trim().to_string()),
            "mesh" => {
                let p = PathBuf::from(value.trim());
                last.1 = Some(if p.is_relative() { base.join(p) } else { p });
            }
            _ => {}
        }
    }
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (bone, mesh))| match (bone, mesh) {
            (Some(b), Some(m)) => Ok((b, m)),
            _ => Err(PipelineError::Config(format!(
                "{}: case {i} is missing its 'bone' or 'mesh' key",
                path.display()
            ))),
        })
        .collect()
}

/// Builds one shape model per bone kind listed in the manifest, persists
/// each as `<out_dir>/<bone>.ossm`, and writes the quality tables as
/// `quality.txt` / `quality.json`.
pub fn build_models(
    manifest: &Path,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<Vec<BuildReport>, PipelineError> {
    const STAGE: &str = "build-ssm";
    let fail = |e: &dyn std::fmt::Display| PipelineError::Stage {
        stage: STAGE,
        reason: e.to_string(),
    };

    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for (bone, mesh) in parse_manifest(manifest)? {
        groups.entry(bone).or_default().push(mesh);
    }
    if groups.is_empty() {
        return Err(PipelineError::Config(format!(
            "{}: manifest lists no cases",
            manifest.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut reports = Vec::new();
    for (bone, mesh_paths) in &groups {
        if mesh_paths.len() < 3 {
            return Err(PipelineError::Config(format!(
                "bone '{bone}' has {} training meshes, need at least 3",
                mesh_paths.len()
            )));
        }
        let params = match bone.as_str() {
            "femur" => BoneParams::default_femur(),
            "tibia" => BoneParams::default_tibia(),
            other => {
                return Err(PipelineError::Config(format!("unknown bone kind '{other}'")))
            }
        };
        let (template, truth) =
            generate_bone_at(&params, opts.template_spacing).map_err(|e| fail(&e))?;
        let meshes: Vec<TriMesh> =
            mesh_paths.iter().map(|p| read_training_mesh(p)).collect::<Result<_, _>>()?;

        let mut set = build_reference(&template, &meshes).map_err(|e| fail(&e))?;
        set.assign_landmarks(&template.vertices, &truth.landmarks);
        let model = pca_build(&set, opts.landmark_weight).map_err(|e| fail(&e))?;
        write_model_file(&out_dir.join(format!("{bone}.ossm")), &model).map_err(|e| fail(&e))?;

        let cum = compactness(&model);
        let full = model.n_modes();
        let mut rows = Vec::new();
        for m in [1usize, 3, full] {
            if m == 0 || m > full || rows.iter().any(|r: &QualityRow| r.modes == m) {
                continue;
            }
            rows.push(QualityRow {
                modes: m,
                compactness: cum[m - 1],
                generality: generality(&set, opts.landmark_weight, m).map_err(|e| fail(&e))?,
                specificity: specificity(&model, &set, m, opts.specificity_samples, opts.seed)
                    .map_err(|e| fail(&e))?,
            });
        }
        reports.push(BuildReport {
            bone: bone.clone(),
            n_shapes: set.n_shapes(),
            n_vertices: set.n_vertices(),
            n_modes: full,
            rows,
        });
    }

    let text: String = reports.iter().map(|r| r.to_text() + "\n").collect();
    std::fs::write(out_dir.join("quality.txt"), text)?;
    std::fs::write(
        out_dir.join("quality.json"),
        serde_json::to_string_pretty(&reports).expect("report serialization cannot fail"),
    )?;
    Ok(reports)
}
