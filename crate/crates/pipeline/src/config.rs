//! Structured-text case configuration.
//!
//! A config file consists of `[section]` headers and `key = value` lines;
//! blank lines and `#` comments are ignored. Unknown sections or keys are
//! rejected so typos surface as config errors. All keys are optional
//! unless a stage actually needs them (for example `[models] femur` is
//! only required once the `fit` stage runs).
//!
//! Sections and keys (defaults in parentheses):
//!
//! - `[case]` — `side` = `left` | `right` (`right`); `seed` (`0`);
//!   `output` = output directory (may instead come from `--output`).
//! - `[inputs]` — `femur_volume`, `tibia_volume`: NRRD label volumes;
//!   `femur_label` (`1`), `tibia_label` (`2`): label value of the bone in
//!   its volume. The two paths may point at the same joint volume.
//! - `[models]` — `femur`, `tibia`: shape model files; `registry`:
//!   optional parameter registry file, evaluated and echoed alongside the
//!   built-in chains.
//! - `[postprocess]` — `open_radius` (`1`), `close_radius` (`1`):
//!   morphological radii in voxels, `0` disables the step;
//!   `smooth_iterations` (`10`), `smooth_lambda` (`0.5`),
//!   `smooth_mu` (`-0.53`): Taubin smoothing of the extracted surface.
//! - `[fit]` — `modes` (`0` = all), `lambda_reg` (`1e-3`),
//!   `span_prior` (`1.0`), `max_iters` (`200`), `relax` (`true`).
//! - `[resection]` — `distal_depth` (`9`), `tibial_depth` (`8`),
//!   `posterior_slope` (`3`), `chamfer_angle` (`45`),
//!   `chamfer_width` (`7.5`), `posterior_offset` (`9`),
//!   `anterior_band` (`45`); depths in mm, angles in degrees.
//! - `[design]` — overrides of the component design defaults:
//!   `medial_slope`, `medial_intercept`, `lateral_slope`,
//!   `lateral_intercept` (condylar radius maps), `femoral_spacing`,
//!   `tibial_spacing`, `insert_spacing` (extraction grid steps, mm),
//!   `rim_margin`, `plate_thickness`, `insert_thickness`, `clearance`,
//!   `socket_depth`. Unset keys keep the library defaults.
//! - `[references]` — ground truth for `evaluate`: `femur_volume`,
//!   `tibia_volume` (label volumes), `femur_mesh`, `tibia_mesh`
//!   (surfaces), `femur_landmarks`, `tibia_landmarks`
//!   (`label = x y z` files).

use std::path::{Path, PathBuf};

use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn is_left(&self) -> bool {
        matches!(self, Side::Left)
    }
}

#[derive(Debug, Clone)]
pub struct PostprocessParams {
    pub open_radius: usize,
    pub close_radius: usize,
    pub smooth_iterations: usize,
    pub smooth_lambda: f64,
    pub smooth_mu: f64,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            open_radius: 1,
            close_radius: 1,
            smooth_iterations: 10,
            smooth_lambda: 0.5,
            smooth_mu: -0.53,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitParams {
    pub modes: usize,
    pub lambda_reg: f64,
    pub span_prior: f64,
    pub max_iters: usize,
    pub relax: bool,
}

impl Default for FitParams {
    fn default() -> Self {
        Self { modes: 0, lambda_reg: 1e-3, span_prior: 1.0, max_iters: 200, relax: true }
    }
}

#[derive(Debug, Clone)]
pub struct ResectParams {
    pub distal_depth: f64,
    pub tibial_depth: f64,
    pub posterior_slope: f64,
    pub chamfer_angle: f64,
    pub chamfer_width: f64,
    pub posterior_offset: f64,
    pub anterior_band: f64,
}

impl Default for ResectParams {
    fn default() -> Self {
        Self {
            distal_depth: 9.0,
            tibial_depth: 8.0,
            posterior_slope: 3.0,
            chamfer_angle: 45.0,
            chamfer_width: 7.5,
            posterior_offset: 9.0,
            anterior_band: 45.0,
        }
    }
}

/// Component-design overrides; `None` keeps the library default.
#[derive(Debug, Clone, Default)]
pub struct DesignParams {
    pub medial_slope: Option<f64>,
    pub medial_intercept: Option<f64>,
    pub lateral_slope: Option<f64>,
    pub lateral_intercept: Option<f64>,
    pub femoral_spacing: Option<f64>,
    pub tibial_spacing: Option<f64>,
    pub insert_spacing: Option<f64>,
    pub rim_margin: Option<f64>,
    pub plate_thickness: Option<f64>,
    pub insert_thickness: Option<f64>,
    pub clearance: Option<f64>,
    pub socket_depth: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReferencePaths {
    pub femur_volume: Option<PathBuf>,
    pub tibia_volume: Option<PathBuf>,
    pub femur_mesh: Option<PathBuf>,
    pub tibia_mesh: Option<PathBuf>,
    pub femur_landmarks: Option<PathBuf>,
    pub tibia_landmarks: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct CaseConfig {
    pub side: Side,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub femur_volume: Option<PathBuf>,
    pub tibia_volume: Option<PathBuf>,
    pub femur_label: u16,
    pub tibia_label: u16,
    pub femur_model: Option<PathBuf>,
    pub tibia_model: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub post: PostprocessParams,
    pub fit: FitParams,
    pub resect: ResectParams,
    pub design: DesignParams,
    pub references: ReferencePaths,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self {
            side: Side::Right,
            seed: 0,
            output: None,
            femur_volume: None,
            tibia_volume: None,
            femur_label: 1,
            tibia_label: 2,
            femur_model: None,
            tibia_model: None,
            registry: None,
            post: PostprocessParams::default(),
            fit: FitParams::default(),
            resect: ResectParams::default(),
            design: DesignParams::default(),
            references: ReferencePaths::default(),
        }
    }
}

impl CaseConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = CaseConfig::default();
        for entry in parse_entries(text)? {
            cfg.apply(&entry)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, e: &Entry) -> Result<(), PipelineError> {
        let bad_key = || {
            PipelineError::Config(format!(
                "line {}: unknown key '{}' in section [{}]",
                e.line, e.key, e.section
            ))
        };
        match (e.section.as_str(), e.key.as_str()) {
            ("case", "side") => {
                self.side = match e.value.as_str() {
                    "left" => Side::Left,
                    "right" => Side::Right,
                    other => {
                        return Err(PipelineError::Config(format!(
                            "line {}: side must be 'left' or 'right', got '{other}'",
                            e.line
                        )))
                    }
                }
            }
            ("case", "seed") => self.seed = e.parse()?,
            ("case", "output") => self.output = Some(PathBuf::from(&e.value)),
            ("inputs", "femur_volume") => self.femur_volume = Some(PathBuf::from(&e.value)),
            ("inputs", "tibia_volume") => self.tibia_volume = Some(PathBuf::from(&e.value)),
            ("inputs", "femur_label") => self.femur_label = e.parse()?,
            ("inputs", "tibia_label") => self.tibia_label = e.parse()?,
            ("models", "femur") => self.femur_model = Some(PathBuf::from(&e.value)),
            ("models", "tibia") => self.tibia_model = Some(PathBuf::from(&e.value)),
            ("models", "registry") => self.registry = Some(PathBuf::from(&e.value)),
            ("postprocess", "open_radius") => self.post.open_radius = e.parse()?,
            ("postprocess", "close_radius") => self.post.close_radius = e.parse()?,
            ("postprocess", "smooth_iterations") => self.post.smooth_iterations = e.parse()?,
            ("postprocess", "smooth_lambda") => self.post.smooth_lambda = e.parse()?,
            ("postprocess", "smooth_mu") => self.post.smooth_mu = e.parse()?,
            ("fit", "modes") => self.fit.modes = e.parse()?,
            ("fit", "lambda_reg") => self.fit.lambda_reg = e.parse()?,
            ("fit", "span_prior") => self.fit.span_prior = e.parse()?,
            ("fit", "max_iters") => self.fit.max_iters = e.parse()?,
            ("fit", "relax") => self.fit.relax = e.parse()?,
            ("resection", "distal_depth") => self.resect.distal_depth = e.parse()?,
            ("resection", "tibial_depth") => self.resect.tibial_depth = e.parse()?,
            ("resection", "posterior_slope") => self.resect.posterior_slope = e.parse()?,
            ("resection", "chamfer_angle") => self.resect.chamfer_angle = e.parse()?,
            ("resection", "chamfer_width") => self.resect.chamfer_width = e.parse()?,
            ("resection", "posterior_offset") => self.resect.posterior_offset = e.parse()?,
            ("resection", "anterior_band") => self.resect.anterior_band = e.parse()?,
            ("design", "medial_slope") => self.design.medial_slope = Some(e.parse()?),
            ("design", "medial_intercept") => self.design.medial_intercept = Some(e.parse()?),
            ("design", "lateral_slope") => self.design.lateral_slope = Some(e.parse()?),
            ("design", "lateral_intercept") => self.design.lateral_intercept = Some(e.parse()?),
            ("design", "femoral_spacing") => self.design.femoral_spacing = Some(e.parse()?),
            ("design", "tibial_spacing") => self.design.tibial_spacing = Some(e.parse()?),
            ("design", "insert_spacing") => self.design.insert_spacing = Some(e.parse()?),
            ("design", "rim_margin") => self.design.rim_margin = Some(e.parse()?),
            ("design", "plate_thickness") => self.design.plate_thickness = Some(e.parse()?),
            ("design", "insert_thickness") => self.design.insert_thickness = Some(e.parse()?),
            ("design", "clearance") => self.design.clearance = Some(e.parse()?),
            ("design", "socket_depth") => self.design.socket_depth = Some(e.parse()?),
            ("references", "femur_volume") => {
                self.references.femur_volume = Some(PathBuf::from(&e.value))
            }
            ("references", "tibia_volume") => {
                self.references.tibia_volume = Some(PathBuf::from(&e.value))
            }
            ("references", "femur_mesh") => {
                self.references.femur_mesh = Some(PathBuf::from(&e.value))
            }
            ("references", "tibia_mesh") => {
                self.references.tibia_mesh = Some(PathBuf::from(&e.value))
            }
            ("references", "femur_landmarks") => {
                self.references.femur_landmarks = Some(PathBuf::from(&e.value))
            }
            ("references", "tibia_landmarks") => {
                self.references.tibia_landmarks = Some(PathBuf::from(&e.value))
            }
            ("case" | "inputs" | "models" | "postprocess" | "fit" | "resection" | "design"
            | "references", _) => return Err(bad_key()),
            (section, _) => {
                return Err(PipelineError::Config(format!(
                    "line {}: unknown section [{section}]",
                    e.line
                )))
            }
        }
        Ok(())
    }
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

impl Entry {
    fn parse<T: std::str::FromStr>(&self) -> Result<T, PipelineError> {
        self.value.parse().map_err(|_| {
            PipelineError::Config(format!(
                "line {}: cannot parse '{}' for key '{}'",
                self.line, self.value, self.key
            ))
        })
    }
}

fn parse_entries(text: &str) -> Result<Vec<Entry>, PipelineError> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(PipelineError::Config(format!(
                "line {}: expected 'key = value' or '[section]', got '{line}'",
                i + 1
            )));
        };
        if section.is_empty() {
            return Err(PipelineError::Config(format!(
                "line {}: key '{}' before any [section] header",
                i + 1,
                key.trim()
            )));
        }
        out.push(Entry {
            section: section.clone(),
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}
