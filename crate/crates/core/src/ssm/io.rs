//! Binary shape-model serialization (`OKSSM1`, little-endian).
//!
//! Layout: 6-byte magic, then u32 vertex / mode / landmark counts, the
//! mean (3V f64), the modes column-major (3V·M f64), the variances
//! (M f64), the topology (u32 triples), the landmark table (length-
//! prefixed UTF-8 label + u32 vertex index each), and the landmark
//! weight (f64).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{ShapeModel, SsmError};

const MAGIC: &[u8; 6] = b"OKSSM1";

pub fn write_model<W: Write>(w: &mut W, model: &ShapeModel) -> Result<(), SsmError> {
    w.write_all(MAGIC)?;
    let v = model.n_vertices() as u32;
    let m = model.n_modes() as u32;
    w.write_all(&v.to_le_bytes())?;
    w.write_all(&m.to_le_bytes())?;
    w.write_all(&(model.landmark_indices.len() as u32).to_le_bytes())?;
    for x in model.mean.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    for c in 0..model.n_modes() {
        for x in model.modes.column(c).iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for x in model.variances.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.write_all(&(model.topology.len() as u32).to_le_bytes())?;
    for tri in &model.topology {
        for &i in tri {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    for (label, &idx) in &model.landmark_indices {
        let bytes = label.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&idx.to_le_bytes())?;
    }
    w.write_all(&model.landmark_weight.to_le_bytes())?;
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<ShapeModel, SsmError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SsmError::Malformed("bad magic".into()));
    }
    let v = read_u32(r)? as usize;
    let m = read_u32(r)? as usize;
    let n_lm = read_u32(r)? as usize;
    if v == 0 || v > 50_000_000 || m > v * 3 {
        return Err(SsmError::Malformed(format!("implausible sizes V={v} M={m}")));
    }
    let mut mean = DVector::zeros(3 * v);
    for i in 0..3 * v {
        mean[i] = read_f64(r)?;
    }
    let mut modes = DMatrix::zeros(3 * v, m);
    for c in 0..m {
        for i in 0..3 * v {
            modes[(i, c)] = read_f64(r)?;
        }
    }
    let mut variances = DVector::zeros(m);
    for i in 0..m {
        variances[i] = read_f64(r)?;
    }
    let n_tri = read_u32(r)? as usize;
    if n_tri > 100_000_000 {
        return Err(SsmError::Malformed(format!("implausible triangle count {n_tri}")));
    }
    let mut topology = Vec::with_capacity(n_tri);
    for _ in 0..n_tri {
        let tri = [read_u32(r)?, read_u32(r)?, read_u32(r)?];
        if tri.iter().any(|&i| i as usize >= v) {
            return Err(SsmError::Malformed("triangle index out of range".into()));
        }
        topology.push(tri);
    }
    let mut landmark_indices = BTreeMap::new();
    for _ in 0..n_lm {
        let len = read_u32(r)? as usize;
        if len > 4096 {
            return Err(SsmError::Malformed("landmark label too long".into()));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let label = String::from_utf8(buf)
            .map_err(|_| SsmError::Malformed("landmark label not UTF-8".into()))?;
        let idx = read_u32(r)?;
        if idx as usize >= v {
            return Err(SsmError::Malformed("landmark index out of range".into()));
        }
        landmark_indices.insert(label, idx);
    }
    let landmark_weight = read_f64(r)?;
    Ok(ShapeModel { mean, modes, variances, topology, landmark_indices, landmark_weight })
}

pub fn write_model_file(path: &Path, model: &ShapeModel) -> Result<(), SsmError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)
}

pub fn read_model_file(path: &Path) -> Result<ShapeModel, SsmError> {
    let mut r = BufReader::new(File::open(path)?);
    read_model(&mut r)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SsmError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, SsmError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
