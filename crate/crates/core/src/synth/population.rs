//! Seeded sampling of a bone population over a low-dimensional factor space.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{generate_bone, BoneKind, BoneParams, BoneTruth, SynthError};
use crate::geometry::TriMesh;

/// One sampled case: parameters, surface and generative truth.
#[derive(Debug, Clone)]
pub struct PopulationCase {
    pub params: BoneParams,
    pub mesh: TriMesh,
    pub truth: BoneTruth,
}

/// Draws `n` bones from a `k_factors`-dimensional Gaussian factor model
/// around the default parameters. Deterministic per seed.
///
/// Factor loadings (per unit standard normal):
/// 1. overall size — length 20, shaft radius 1.2, condyle radii 1.5,
///    separation 2, head radius 1.5, plafond width 2.5
/// 2. condylar shape — medial radius +1.2, lateral radius −0.8,
///    separation 2.5
/// 3. sagittal profile — shaft bow 1.2°, trochlea/dish depth 0.8
/// 4. sulcus — sulcus angle 5°
/// 5. rotation — version angle 3°
pub fn sample_population(
    bone: BoneKind,
    n: usize,
    seed: u64,
    k_factors: usize,
) -> Result<Vec<PopulationCase>, SynthError> {
    if n < 3 {
        return Err(SynthError::InvalidParams(format!("population needs n ≥ 3, got {n}")));
    }
    if !(1..=5).contains(&k_factors) {
        return Err(SynthError::InvalidParams(format!(
            "k_factors must lie in 1..=5, got {k_factors}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut z = [0.0f64; 5];
        for zi in z.iter_mut().take(k_factors) {
            let v: f64 = rng.sample(StandardNormal);
            *zi = v.clamp(-2.5, 2.5);
        }
        let mut p = match bone {
            BoneKind::Femur => BoneParams::default_femur(),
            BoneKind::Tibia => BoneParams::default_tibia(),
        };
        p.length += 20.0 * z[0];
        p.shaft_radius += 1.2 * z[0];
        p.condyle_radii.0 += 1.5 * z[0] + 1.2 * z[1];
        p.condyle_radii.1 += 1.5 * z[0] - 0.8 * z[1];
        p.condyle_separation += 2.0 * z[0] + 2.5 * z[1];
        p.head_radius += 1.5 * z[0];
        p.plafond_width += 2.5 * z[0];
        p.shaft_bow += 1.2 * z[2];
        p.trochlea_depth += 0.8 * z[2] * if bone == BoneKind::Tibia { 0.5 } else { 1.0 };
        p.sulcus_angle += 5.0 * z[3];
        p.version_angle += 3.0 * z[4];

        p.length = p.length.clamp(350.0, 500.0);
        p.condyle_radii.0 = p.condyle_radii.0.clamp(15.0, 35.0);
        p.condyle_radii.1 = p.condyle_radii.1.clamp(15.0, 35.0);
        p.shaft_bow = p.shaft_bow.max(0.0);
        p.trochlea_depth = p.trochlea_depth.max(1.5);
        p.sulcus_angle = p.sulcus_angle.clamp(110.0, 165.0);
        p.seed = rng.gen();

        let (mesh, truth) = generate_bone(&p)?;
        out.push(PopulationCase { params: p, mesh, truth });
    }
    Ok(out)
}

/// Writes the population manifest: one record per case, `key = value`
/// lines, blank-line separated.
pub fn write_manifest<W: Write>(
    w: &mut W,
    cases: &[PopulationCase],
    mesh_paths: &[String],
) -> std::io::Result<()> {
    writeln!(w, "# synthetic population manifest")?;
    for (i, case) in cases.iter().enumerate() {
        let p = &case.params;
        writeln!(w)?;
        writeln!(w, "[case {i}]")?;
        writeln!(w, "bone = {}", p.bone.name())?;
        writeln!(w, "seed = {}", p.seed)?;
        writeln!(w, "length = {}", p.length)?;
        writeln!(w, "shaft_radius = {}", p.shaft_radius)?;
        writeln!(w, "shaft_bow = {}", p.shaft_bow)?;
        writeln!(w, "condyle_radius_medial = {}", p.condyle_radii.0)?;
        writeln!(w, "condyle_radius_lateral = {}", p.condyle_radii.1)?;
        writeln!(w, "condyle_separation = {}", p.condyle_separation)?;
        writeln!(w, "trochlea_depth = {}", p.trochlea_depth)?;
        writeln!(w, "sulcus_angle = {}", p.sulcus_angle)?;
        writeln!(w, "head_radius = {}", p.head_radius)?;
        writeln!(w, "plafond_width = {}", p.plafond_width)?;
        writeln!(w, "version_angle = {}", p.version_angle)?;
        writeln!(w, "varus_angle = {}", p.varus_angle)?;
        if let Some(path) = mesh_paths.get(i) {
            writeln!(w, "mesh = {path}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_identical_population() {
        let a = sample_population(BoneKind::Femur, 3, 9, 3).unwrap();
        let b = sample_population(BoneKind::Femur, 3, 9, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.params.length, y.params.length);
            assert_eq!(x.mesh.vertices, y.mesh.vertices);
        }
    }

    #[test]
    fn minimal_population_is_valid() {
        let pop = sample_population(BoneKind::Tibia, 3, 1, 1).unwrap();
        assert_eq!(pop.len(), 3);
        for c in &pop {
            assert!(c.mesh.is_watertight());
            c.params.validate().unwrap();
        }
    }

    /// Regression: this draw used to produce a femur whose enlarged head
    /// sphere outgrew the sampling-grid bounds and came back clipped
    /// (non-watertight).
    #[test]
    fn large_headed_draw_stays_watertight() {
        let pop = sample_population(BoneKind::Femur, 10, 7, 3).unwrap();
        for c in &pop {
            assert!(c.mesh.is_watertight());
        }
    }

    #[test]
    fn too_small_population_rejected() {
        assert!(sample_population(BoneKind::Femur, 2, 0, 3).is_err());
        assert!(sample_population(BoneKind::Femur, 5, 0, 6).is_err());
    }

    #[test]
    fn manifest_lists_every_case() {
        let pop = sample_population(BoneKind::Femur, 3, 4, 2).unwrap();
        let mut buf = Vec::new();
        let paths: Vec<String> = (0..3).map(|i| format!("case{i}.stl")).collect();
        write_manifest(&mut buf, &pop, &paths).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.matches("[case ").count(), 3);
        assert!(text.contains("mesh = case2.stl"));
    }
}
