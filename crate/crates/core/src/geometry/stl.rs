//! Binary STL reading and writing.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Point3;

use super::{GeometryError, TriMesh};

/// Writes binary STL: 80-byte header, u32 triangle count, then 50-byte
/// records (normal + 3 vertices as f32, u16 attribute).
pub fn write_stl<W: Write>(w: &mut W, mesh: &TriMesh) -> Result<(), GeometryError> {
    let mut header = [0u8; 80];
    let tag = b"okplan binary stl";
    header[..tag.len()].copy_from_slice(tag);
    w.write_all(&header)?;
    w.write_all(&(mesh.triangles.len() as u32).to_le_bytes())?;
    for t in 0..mesh.triangles.len() {
        let n = mesh.triangle_normal(t);
        for c in [n.x, n.y, n.z] {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
        for p in mesh.triangle_points(t) {
            for c in [p.x, p.y, p.z] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        w.write_all(&0u16.to_le_bytes())?;
    }
    Ok(())
}

/// Reads binary STL, welding exactly equal vertices back into an indexed mesh.
pub fn read_stl<R: Read>(r: &mut R) -> Result<TriMesh, GeometryError> {
    let mut header = [0u8; 80];
    r.read_exact(&mut header)?;
    let mut count_buf = [0u8; 4];
    r.read_exact(&mut count_buf)?;
    let count = u32::from_le_bytes(count_buf) as usize;

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::with_capacity(count);
    let mut index: std::collections::HashMap<[u32; 3], u32> = std::collections::HashMap::new();

    let mut rec = [0u8; 50];
    for _ in 0..count {
        r.read_exact(&mut rec)?;
        let mut tri = [0u32; 3];
        for (v, tri_slot) in tri.iter_mut().enumerate() {
            let base = 12 + v * 12;
            let mut bits = [0u32; 3];
            let mut coords = [0f32; 3];
            for c in 0..3 {
                let mut b = [0u8; 4];
                b.copy_from_slice(&rec[base + 4 * c..base + 4 * c + 4]);
                bits[c] = u32::from_le_bytes(b);
                coords[c] = f32::from_le_bytes(b);
            }
            let id = *index.entry(bits).or_insert_with(|| {
                vertices.push(Point3::new(coords[0] as f64, coords[1] as f64, coords[2] as f64));
                (vertices.len() - 1) as u32
            });
            *tri_slot = id;
        }
        if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
            triangles.push(tri);
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn write_stl_file(path: &Path, mesh: &TriMesh) -> Result<(), GeometryError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_stl(&mut f, mesh)
}

pub fn read_stl_file(path: &Path) -> Result<TriMesh, GeometryError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_stl(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn round_trip_preserves_geometry_to_f32() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.125, -3.5, 10.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_stl(&mut buf, &m).unwrap();
        let back = read_stl(&mut buf.as_slice()).unwrap();
        assert_eq!(back.triangles.len(), 4);
        for t in 0..4 {
            let orig = m.triangle_points(t);
            let rt = back.triangle_points(t);
            for (a, b) in orig.iter().zip(&rt) {
                for i in 0..3 {
                    assert_eq!(a[i] as f32, b[i] as f32);
                }
            }
        }
    }
}
