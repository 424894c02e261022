//! `okplan` command line: synthetic data generation, shape-model
//! building, staged case processing and evaluation.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on stage
//! failures (the failing stage is named on stderr).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use okplan::build::{build_models, BuildOptions};
use okplan::config::CaseConfig;
use okplan::evaluate::evaluate_case;
use okplan::stages::run_case;
use okplan::PipelineError;
use okplan_core::synth::{sample_population, voxelize, write_manifest, BoneKind, PopulationCase};

#[derive(Parser)]
#[command(
    name = "okplan",
    about = "Knee arthroplasty planning pipeline",
    long_about = "Processes a case through segmentation post-processing, meshing, \
shape-model fitting, morphometry and implant design. Stages execute \
sequentially and deterministically for a given config and seed."
)]
struct Cli {
    /// Case configuration file ([section] headers, key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[case] output` from the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed; overrides `[case] seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap (default: hardware). Stages currently run
    /// sequentially with deterministic kernels; the cap is recorded and
    /// reserved for per-stage parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Stage to resume from (volume, geometry, fit, morphometry, implant);
    /// earlier stages load their persisted artifacts.
    #[arg(long, global = true)]
    stage: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic bone population with exact ground truth.
    Synth {
        /// Bone kind: femur, tibia, or both.
        #[arg(long, default_value = "both")]
        bone: String,
        /// Cases per bone.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Gaussian factors of the population model (1..=5).
        #[arg(long, default_value_t = 3)]
        factors: usize,
        /// Also voxelize each case into an NRRD label volume at this
        /// spacing (mm).
        #[arg(long)]
        voxel_spacing: Option<f64>,
    },
    /// Build shape models and a quality report from a population manifest.
    BuildSsm {
        /// Population manifest written by `synth`.
        #[arg(long)]
        manifest: PathBuf,
        /// Landmark augmentation weight of the PCA build.
        #[arg(long, default_value_t = 10.0)]
        landmark_weight: f64,
        /// Grid spacing of the correspondence template, mm.
        #[arg(long)]
        template_spacing: Option<f64>,
        /// Sample count of the specificity estimate.
        #[arg(long, default_value_t = 20)]
        specificity_samples: usize,
    },
    /// Run a case up to and including shape-model fitting.
    Fit,
    /// Run a case up to and including morphometry.
    Morph,
    /// Run a case through implant design (alias of `run`).
    Design,
    /// Compare case outputs against the `[references]` section.
    Evaluate,
    /// Run all stages of a case.
    Run,
}

fn case_config(cli: &Cli) -> Result<CaseConfig, PipelineError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| PipelineError::Config("--config is required for this command".into()))?;
    let mut cfg = CaseConfig::from_file(path)?;
    if let Some(out) = &cli.output {
        cfg.output = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn synth(cli: &Cli, bone: &str, count: usize, factors: usize, voxel: Option<f64>) -> Result<(), PipelineError> {
    let out = cli
        .output
        .clone()
        .ok_or_else(|| PipelineError::Config("--output is required for synth".into()))?;
    std::fs::create_dir_all(&out)?;
    let kinds: Vec<BoneKind> = match bone {
        "femur" => vec![BoneKind::Femur],
        "tibia" => vec![BoneKind::Tibia],
        "both" => vec![BoneKind::Femur, BoneKind::Tibia],
        other => {
            return Err(PipelineError::Config(format!(
                "bone must be femur, tibia or both, got '{other}'"
            )))
        }
    };
    let seed = cli.seed.unwrap_or(0);
    let fail = |e: &dyn std::fmt::Display| PipelineError::Stage {
        stage: "synth",
        reason: e.to_string(),
    };

    let mut cases: Vec<PopulationCase> = Vec::new();
    let mut mesh_paths: Vec<String> = Vec::new();
    for (k, kind) in kinds.iter().enumerate() {
        let pop = sample_population(*kind, count, seed + k as u64, factors).map_err(|e| fail(&e))?;
        for (i, case) in pop.into_iter().enumerate() {
            let stem = format!("{}_{i:03}", kind.name());
            let mesh_name = format!("{stem}.stl");
            okplan_core::geometry::write_stl_file(&out.join(&mesh_name), &case.mesh)
                .map_err(|e| fail(&e))?;
            okplan::artifacts::write_landmarks(
                &out.join(format!("{stem}_landmarks.txt")),
                &case.truth.landmarks,
            )?;
            if let Some(s) = voxel {
                let label = match kind {
                    BoneKind::Femur => 1,
                    BoneKind::Tibia => 2,
                };
                let vol = voxelize(&case.mesh, [s, s, s], label).map_err(|e| fail(&e))?;
                okplan_core::volume::write_nrrd_file(&out.join(format!("{stem}.nrrd")), &vol)
                    .map_err(|e| fail(&e))?;
            }
            mesh_paths.push(mesh_name);
            cases.push(case);
        }
    }
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(out.join("manifest.txt"))?);
    write_manifest(&mut manifest, &cases, &mesh_paths)?;
    println!("wrote {} cases to {}", cases.len(), out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<ExitCode, PipelineError> {
    match &cli.cmd {
        Cmd::Synth { bone, count, factors, voxel_spacing } => {
            synth(cli, bone, *count, *factors, *voxel_spacing)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::BuildSsm { manifest, landmark_weight, template_spacing, specificity_samples } => {
            let out = cli
                .output
                .clone()
                .ok_or_else(|| PipelineError::Config("--output is required for build-ssm".into()))?;
            let mut opts = BuildOptions {
                landmark_weight: *landmark_weight,
                specificity_samples: *specificity_samples,
                seed: cli.seed.unwrap_or(0),
                ..BuildOptions::default()
            };
            if let Some(s) = template_spacing {
                opts.template_spacing = *s;
            }
            let reports = build_models(manifest, &out, &opts)?;
            for r in &reports {
                print!("{}", r.to_text());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Evaluate => {
            let cfg = case_config(cli)?;
            let report = evaluate_case(&cfg)?;
            print!("{}", report.to_text());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Fit | Cmd::Morph | Cmd::Design | Cmd::Run => {
            let cfg = case_config(cli)?;
            let start = cli.stage.as_deref().unwrap_or("volume");
            let stop = match cli.cmd {
                Cmd::Fit => "fit",
                Cmd::Morph => "morphometry",
                _ => "implant",
            };
            let report = run_case(&cfg, start, stop)?;
            print!("{}", report.to_text());
            if let Some(f) = &report.failure {
                eprintln!("stage '{}' failed: {}", f.stage, f.reason);
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e @ (PipelineError::Config(_) | PipelineError::MissingReference(_))) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            if let PipelineError::Stage { stage, .. } = &e {
                eprintln!("stage '{stage}' failed");
            }
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
