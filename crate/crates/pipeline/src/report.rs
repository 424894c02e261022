//! Case and evaluation reports, emitted as human-readable text and as
//! JSON with stable key names.
//!
//! Case report JSON keys: `side`, `seed`, `timings` (array of
//! `{stage, seconds}` in execution order), `metrics` (flat name → value
//! map), `landmarks` (label → `[x, y, z]`, patient frame, mm),
//! `fit_residuals` (bone → rmse, mm), `components` (array of
//! `{name, watertight, self_intersections, volume, min_wall_thickness,
//! pass}`), `hang` (array of `{name, rmse, hausdorff, max_overhang,
//! max_underhang, samples}`), `failure` (`{stage, reason}` or null).
//!
//! Evaluation report JSON keys: `metrics` (flat name → value map) and
//! `landmark_errors` (bone → label → mm).

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentSummary {
    pub name: String,
    pub watertight: bool,
    pub self_intersections: usize,
    pub volume: f64,
    pub min_wall_thickness: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HangSummary {
    pub name: String,
    pub rmse: f64,
    pub hausdorff: f64,
    pub max_overhang: f64,
    pub max_underhang: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub side: String,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
    pub metrics: BTreeMap<String, f64>,
    pub landmarks: BTreeMap<String, [f64; 3]>,
    pub fit_residuals: BTreeMap<String, f64>,
    pub components: Vec<ComponentSummary>,
    pub hang: Vec<HangSummary>,
    pub failure: Option<Failure>,
}

impl CaseReport {
    pub fn new(side: &str, seed: u64) -> Self {
        Self {
            side: side.to_string(),
            seed,
            timings: Vec::new(),
            metrics: BTreeMap::new(),
            landmarks: BTreeMap::new(),
            fit_residuals: BTreeMap::new(),
            components: Vec::new(),
            hang: Vec::new(),
            failure: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        push(&mut out, format!("case report — side {}, seed {}", self.side, self.seed));
        push(&mut out, String::new());
        push(&mut out, "timings".to_string());
        for t in &self.timings {
            push(&mut out, format!("  {:<12} {:>9.3} s", t.stage, t.seconds));
        }
        if !self.fit_residuals.is_empty() {
            push(&mut out, String::new());
            push(&mut out, "fit residuals (mm rms)".to_string());
            for (bone, r) in &self.fit_residuals {
                push(&mut out, format!("  {bone:<12} {r:.4}"));
            }
        }
        if !self.metrics.is_empty() {
            push(&mut out, String::new());
            push(&mut out, "metrics".to_string());
            for (name, v) in &self.metrics {
                push(&mut out, format!("  {name:<40} {v:.4}"));
            }
        }
        if !self.landmarks.is_empty() {
            push(&mut out, String::new());
            push(&mut out, "landmarks (patient frame, mm)".to_string());
            for (label, p) in &self.landmarks {
                push(
                    &mut out,
                    format!("  {label:<28} {:>9.3} {:>9.3} {:>9.3}", p[0], p[1], p[2]),
                );
            }
        }
        if !self.components.is_empty() {
            push(&mut out, String::new());
            push(
                &mut out,
                "components (watertight / self-intersections / volume mm^3 / min wall mm / pass)"
                    .to_string(),
            );
            for c in &self.components {
                let wall = c
                    .min_wall_thickness
                    .map(|w| format!("{w:.3}"))
                    .unwrap_or_else(|| "-".to_string());
                push(
                    &mut out,
                    format!(
                        "  {:<10} {:>5} {:>3} {:>12.1} {:>7} {}",
                        c.name,
                        c.watertight,
                        c.self_intersections,
                        c.volume,
                        wall,
                        if c.pass { "pass" } else { "FAIL" }
                    ),
                );
            }
        }
        if !self.hang.is_empty() {
            push(&mut out, String::new());
            push(
                &mut out,
                "contour fit (rmse / hausdorff / max over / max under, mm)".to_string(),
            );
            for h in &self.hang {
                push(
                    &mut out,
                    format!(
                        "  {:<10} {:>7.3} {:>7.3} {:>7.3} {:>7.3}  ({} samples)",
                        h.name, h.rmse, h.hausdorff, h.max_overhang, h.max_underhang, h.samples
                    ),
                );
            }
        }
        if let Some(f) = &self.failure {
            push(&mut out, String::new());
            push(&mut out, format!("FAILED at stage '{}': {}", f.stage, f.reason));
        }
        out
    }
}

/// Evaluation against supplied references: flat metrics plus per-bone
/// landmark error tables.
#[derive(Debug, Clone, Serialize, Default)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, f64>,
    pub landmark_errors: BTreeMap<String, BTreeMap<String, f64>>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("evaluation report\n\nmetrics\n");
        for (name, v) in &self.metrics {
            out.push_str(&format!("  {name:<40} {v:.4}\n"));
        }
        for (bone, table) in &self.landmark_errors {
            out.push_str(&format!("\nlandmark errors — {bone} (mm)\n"));
            for (label, e) in table {
                out.push_str(&format!("  {label:<28} {e:.3}\n"));
            }
        }
        out
    }
}
