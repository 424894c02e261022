//! Component integrity report and STL + manifest export.

use std::io::Write as _;
use std::path::Path;

use crate::geometry::{mesh_checks, write_stl_file};

use super::{ImplantComponent, ImplantError};

#[derive(Debug, Clone, Copy)]
pub struct ValidityConfig {
    /// Minimum acceptable wall thickness (mm).
    pub min_wall_thickness: f64,
    /// Distance from sharp edges excluded from thickness sampling (mm).
    pub rim_exclusion: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self { min_wall_thickness: 2.0, rim_exclusion: 1.5 }
    }
}

/// Report-only integrity summary of a component.
#[derive(Debug, Clone)]
pub struct ValidityReport {
    pub watertight: bool,
    pub self_intersections: usize,
    pub volume: f64,
    pub min_wall_thickness: Option<f64>,
    pub wall_ok: bool,
}

impl ValidityReport {
    pub fn pass(&self) -> bool {
        self.watertight && self.self_intersections == 0 && self.volume > 0.0 && self.wall_ok
    }
}

/// Runs all integrity checks on a component. Never fails; the caller
/// decides what to do with a failing report.
pub fn validity_check(c: &ImplantComponent, cfg: &ValidityConfig) -> ValidityReport {
    let checks = mesh_checks(&c.mesh, cfg.rim_exclusion);
    let wall_ok = match checks.min_wall_thickness {
        Some(t) => t >= cfg.min_wall_thickness,
        None => false,
    };
    ValidityReport {
        watertight: checks.watertight,
        self_intersections: checks.self_intersections,
        volume: checks.volume,
        min_wall_thickness: checks.min_wall_thickness,
        wall_ok,
    }
}

/// Writes `<stem>.stl` (component-frame mesh) and `<stem>.manifest.txt`
/// containing the kind, the component→patient frame as 12 row-major reals,
/// the design parameters echoed by the caller and the validity report.
pub fn export_component(
    dir: &Path,
    stem: &str,
    component: &ImplantComponent,
    params: &[(String, String)],
    report: &ValidityReport,
) -> Result<(), ImplantError> {
    std::fs::create_dir_all(dir)?;
    write_stl_file(&dir.join(format!("{stem}.stl")), &component.mesh)?;

    let mut out = String::new();
    out.push_str(&format!("kind = {}\n", component.kind.name()));
    let r = &component.frame.rotation;
    let t = &component.frame.translation;
    let s = component.frame.scale;
    let mut frame_vals = Vec::with_capacity(12);
    for row in 0..3 {
        for col in 0..3 {
            frame_vals.push(format!("{:.9}", r[(row, col)] * s));
        }
        frame_vals.push(format!("{:.9}", t[row]));
    }
    out.push_str(&format!("frame = {}\n", frame_vals.join(" ")));
    for (k, v) in params {
        out.push_str(&format!("param.{k} = {v}\n"));
    }
    out.push_str(&format!("validity.watertight = {}\n", report.watertight));
    out.push_str(&format!(
        "validity.self_intersections = {}\n",
        report.self_intersections
    ));
    out.push_str(&format!("validity.volume_mm3 = {:.3}\n", report.volume));
    out.push_str(&format!(
        "validity.min_wall_thickness = {}\n",
        report
            .min_wall_thickness
            .map_or("none".to_string(), |t| format!("{t:.3}"))
    ));
    out.push_str(&format!("validity.pass = {}\n", report.pass()));

    let mut f = std::fs::File::create(dir.join(format!("{stem}.manifest.txt")))?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RigidTransform, TriMesh};
    use crate::implant::ComponentKind;
    use crate::volume::{marching_tets, ScalarGrid};

    fn ball(r: f64) -> TriMesh {
        let grid = ScalarGrid::sample([40, 40, 40], [r / 12.0; 3], [-1.6 * r; 3], |p| {
            r - p.coords.norm()
        });
        marching_tets(&grid, 0.0)
    }

    fn component(mesh: TriMesh) -> ImplantComponent {
        ImplantComponent {
            kind: ComponentKind::Femoral,
            mesh,
            frame: RigidTransform::identity(),
        }
    }

    #[test]
    fn closed_component_passes_all_checks() {
        let comp = component(ball(10.0));
        let report = validity_check(&comp, &ValidityConfig::default());
        assert!(report.watertight);
        assert_eq!(report.self_intersections, 0);
        assert!(report.volume > 3500.0);
        assert!(report.wall_ok);
        assert!(report.pass());
    }

    #[test]
    fn deleted_triangle_fails_watertightness() {
        let mut mesh = ball(10.0);
        mesh.triangles.pop();
        let report = validity_check(&component(mesh), &ValidityConfig::default());
        assert!(!report.watertight);
        assert!(!report.pass());
    }

    #[test]
    fn interpenetrating_lobes_fail_self_intersection() {
        let a = ball(8.0);
        let mut b = ball(8.0);
        for v in &mut b.vertices {
            v.x += 6.0;
        }
        let offset = a.vertices.len() as u32;
        let mut mesh = a;
        mesh.vertices.extend(b.vertices);
        mesh.triangles
            .extend(b.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
        let report = validity_check(&component(mesh), &ValidityConfig::default());
        assert!(report.self_intersections > 0);
        assert!(!report.pass());
    }

    #[test]
    fn export_writes_stl_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let comp = component(ball(6.0));
        let report = validity_check(&comp, &ValidityConfig::default());
        export_component(
            dir.path(),
            "femoral",
            &comp,
            &[("radius".to_string(), "6".to_string())],
            &report,
        )
        .unwrap();
        let stl = dir.path().join("femoral.stl");
        let manifest = dir.path().join("femoral.manifest.txt");
        assert!(stl.exists());
        let text = std::fs::read_to_string(manifest).unwrap();
        assert!(text.contains("kind = femoral"));
        assert!(text.contains("param.radius = 6"));
        assert!(text.contains("validity.pass = true"));
        let frame_line = text.lines().find(|l| l.starts_with("frame = ")).unwrap();
        assert_eq!(frame_line.trim_start_matches("frame = ").split(' ').count(), 12);
        let read = crate::geometry::read_stl_file(&stl).unwrap();
        assert_eq!(read.triangles.len(), comp.mesh.triangles.len());
    }
}
