//! ASCII PLY reading and writing (vertex x/y/z + face vertex_indices).

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Point3;

use super::{GeometryError, TriMesh};

pub fn write_ply<W: Write>(w: &mut W, mesh: &TriMesh) -> Result<(), GeometryError> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn read_ply<R: BufRead>(r: &mut R) -> Result<TriMesh, GeometryError> {
    let malformed = |reason: &str| GeometryError::Malformed {
        format: "ply",
        reason: reason.to_string(),
    };

    let mut lines = r.lines();
    let magic = lines.next().ok_or_else(|| malformed("empty file"))??;
    if magic.trim() != "ply" {
        return Err(malformed("missing ply magic"));
    }

    let mut n_vertices = None;
    let mut n_faces = None;
    for line in lines.by_ref() {
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] | ["comment", ..] | ["property", ..] => {}
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| malformed("bad element count"))?;
                match *name {
                    "vertex" => n_vertices = Some(count),
                    "face" => n_faces = Some(count),
                    _ => {}
                }
            }
            ["format", ..] => return Err(malformed("only ascii format supported")),
            [] => {}
            _ => return Err(malformed("unrecognized header line")),
        }
    }
    let n_vertices = n_vertices.ok_or_else(|| malformed("no vertex element"))?;
    let n_faces = n_faces.ok_or_else(|| malformed("no face element"))?;

    let mut vertices = Vec::with_capacity(n_vertices);
    let mut triangles = Vec::with_capacity(n_faces);
    for _ in 0..n_vertices {
        let line = lines.next().ok_or_else(|| malformed("truncated vertices"))??;
        let mut it = line.split_whitespace();
        let mut coord = [0.0f64; 3];
        for c in &mut coord {
            *c = it
                .next()
                .ok_or_else(|| malformed("short vertex line"))?
                .parse()
                .map_err(|_| malformed("bad vertex coordinate"))?;
        }
        vertices.push(Point3::new(coord[0], coord[1], coord[2]));
    }
    for _ in 0..n_faces {
        let line = lines.next().ok_or_else(|| malformed("truncated faces"))??;
        let nums: Vec<u32> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| malformed("bad face index")))
            .collect::<Result<_, _>>()?;
        if nums.len() < 4 || nums[0] != 3 {
            return Err(malformed("only triangular faces supported"));
        }
        triangles.push([nums[1], nums[2], nums[3]]);
    }
    TriMesh::new(vertices, triangles)
}

pub fn write_ply_file(path: &Path, mesh: &TriMesh) -> Result<(), GeometryError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(&mut f, mesh)
}

pub fn read_ply_file(path: &Path) -> Result<TriMesh, GeometryError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_ply(&mut f)
}
