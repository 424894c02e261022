//! Lossless text persistence of inter-stage artifacts.
//!
//! Stage isolation demands that resuming from persisted artifacts
//! reproduces downstream outputs bit for bit, so meshes, landmarks and
//! fit results are stored as decimal text via Rust's shortest
//! round-trip float formatting rather than the (32-bit) STL/PLY
//! interchange formats.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Matrix3, Point3, Vector3};
use okplan_core::geometry::{RigidTransform, TriMesh};
use okplan_core::ssm::FitResult;

fn malformed(path: &Path, reason: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("{}: {reason}", path.display()))
}

/// Writes a mesh as `mesh <nv> <nt>` followed by `v x y z` and `f a b c`
/// lines with full f64 precision.
pub fn write_mesh(path: &Path, mesh: &TriMesh) -> io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "mesh {} {}", mesh.vertices.len(), mesh.triangles.len())?;
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0], t[1], t[2])?;
    }
    w.flush()
}

pub fn read_mesh(path: &Path) -> io::Result<TriMesh> {
    let f = std::fs::File::open(path)?;
    let mut lines = io::BufReader::new(f).lines();
    let header = lines.next().ok_or_else(|| malformed(path, "empty file"))??;
    let mut it = header.split_whitespace();
    if it.next() != Some("mesh") {
        return Err(malformed(path, "missing mesh header"));
    }
    let nv: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(path, "bad vertex count"))?;
    let nt: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(path, "bad triangle count"))?;
    let mut vertices = Vec::with_capacity(nv);
    let mut triangles = Vec::with_capacity(nt);
    for line in lines {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0f64; 3];
                for x in &mut c {
                    *x = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| malformed(path, "bad vertex line"))?;
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut t = [0u32; 3];
                for x in &mut t {
                    *x = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| malformed(path, "bad face line"))?;
                }
                triangles.push(t);
            }
            Some(other) => return Err(malformed(path, &format!("unknown record '{other}'"))),
            None => {}
        }
    }
    if vertices.len() != nv || triangles.len() != nt {
        return Err(malformed(path, "header count mismatch"));
    }
    TriMesh::new(vertices, triangles).map_err(|e| malformed(path, &e.to_string()))
}

/// Writes labeled points as `label = x y z` lines.
pub fn write_landmarks(path: &Path, landmarks: &BTreeMap<String, Point3<f64>>) -> io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (label, p) in landmarks {
        writeln!(w, "{label} = {} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()
}

pub fn read_landmarks(path: &Path) -> io::Result<BTreeMap<String, Point3<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, rest) =
            line.split_once('=').ok_or_else(|| malformed(path, "expected 'label = x y z'"))?;
        let mut c = [0.0f64; 3];
        let mut it = rest.split_whitespace();
        for x in &mut c {
            *x = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed(path, "bad coordinate"))?;
        }
        out.insert(label.trim().to_string(), Point3::new(c[0], c[1], c[2]));
    }
    Ok(out)
}

/// Persists a fit result minus its mesh (stored separately with
/// [`write_mesh`]): residual, patient→model transform and coefficients.
pub fn write_fit(path: &Path, fit: &FitResult) -> io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "residual_rmse = {}", fit.residual_rmse)?;
    let r = &fit.transform.rotation;
    let vals: Vec<String> =
        (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| r[(i, j)].to_string()).collect();
    writeln!(w, "rotation = {}", vals.join(" "))?;
    let t = &fit.transform.translation;
    writeln!(w, "translation = {} {} {}", t.x, t.y, t.z)?;
    writeln!(w, "scale = {}", fit.transform.scale)?;
    let coeffs: Vec<String> = fit.coefficients.iter().map(|c| c.to_string()).collect();
    writeln!(w, "coefficients = {}", coeffs.join(" "))?;
    w.flush()
}

/// Reads a fit persisted by [`write_fit`], attaching the given model-frame
/// fitted mesh.
pub fn read_fit(path: &Path, fitted_mesh: TriMesh) -> io::Result<FitResult> {
    let text = std::fs::read_to_string(path)?;
    let mut fields: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for line in text.lines() {
        let Some((key, rest)) = line.split_once('=') else { continue };
        let vals: Option<Vec<f64>> = rest.split_whitespace().map(|s| s.parse().ok()).collect();
        fields.insert(
            key.trim(),
            vals.ok_or_else(|| malformed(path, "bad numeric field"))?,
        );
    }
    let get = |key: &str, n: usize| -> io::Result<Vec<f64>> {
        let v = fields
            .get(key)
            .ok_or_else(|| malformed(path, &format!("missing field '{key}'")))?;
        if n > 0 && v.len() != n {
            return Err(malformed(path, &format!("field '{key}' has {} values, expected {n}", v.len())));
        }
        Ok(v.clone())
    };
    let rot = get("rotation", 9)?;
    let tr = get("translation", 3)?;
    let transform = RigidTransform::new(
        Matrix3::from_row_slice(&rot),
        Vector3::new(tr[0], tr[1], tr[2]),
        get("scale", 1)?[0],
    );
    Ok(FitResult {
        coefficients: DVector::from_vec(get("coefficients", 0)?),
        transform,
        fitted_mesh,
        residual_rmse: get("residual_rmse", 1)?[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn odd_mesh() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.1 + 0.2, -1.0 / 3.0, 1e-17),
                Point3::new(2.0_f64.sqrt(), std::f64::consts::PI, -0.0),
                Point3::new(1.0e8 + 0.123456789, 5.0, 6.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn mesh_roundtrip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mesh");
        let mesh = odd_mesh();
        write_mesh(&path, &mesh).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn landmark_roundtrip_preserves_labels_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.txt");
        let mut lm = BTreeMap::new();
        lm.insert("AP Sizing Point".to_string(), Point3::new(0.1 + 0.2, -7.25, 1e-12));
        lm.insert("Medial Epicondyle".to_string(), Point3::new(-3.0, 0.0, 9.75));
        write_landmarks(&path, &lm).unwrap();
        let back = read_landmarks(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (label, p) in &lm {
            let q = &back[label];
            assert_eq!(p.x.to_bits(), q.x.to_bits());
            assert_eq!(p.y.to_bits(), q.y.to_bits());
            assert_eq!(p.z.to_bits(), q.z.to_bits());
        }
    }

    #[test]
    fn fit_roundtrip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.txt");
        let fit = FitResult {
            coefficients: DVector::from_vec(vec![0.1 + 0.2, -1.0 / 7.0, 3.25]),
            transform: RigidTransform::new(
                *Rotation3::from_euler_angles(0.3, -0.7, 1.9).matrix(),
                Vector3::new(1.0 / 3.0, -250.5, 1e-9),
                1.0,
            ),
            fitted_mesh: odd_mesh(),
            residual_rmse: 0.12345678901234567,
        };
        write_fit(&path, &fit).unwrap();
        let back = read_fit(&path, odd_mesh()).unwrap();
        assert_eq!(back.residual_rmse.to_bits(), fit.residual_rmse.to_bits());
        assert_eq!(back.transform.scale.to_bits(), fit.transform.scale.to_bits());
        for i in 0..3 {
            assert_eq!(
                back.transform.translation[i].to_bits(),
                fit.transform.translation[i].to_bits()
            );
            for j in 0..3 {
                assert_eq!(
                    back.transform.rotation[(i, j)].to_bits(),
                    fit.transform.rotation[(i, j)].to_bits()
                );
            }
        }
        for i in 0..3 {
            assert_eq!(back.coefficients[i].to_bits(), fit.coefficients[i].to_bits());
        }
    }
}
