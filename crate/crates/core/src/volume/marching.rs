//! Isosurface extraction on a regular scalar grid.
//!
//! Cells are decomposed into six tetrahedra (Kuhn subdivision, shared main
//! diagonal). The decomposition is translation-invariant, so neighbouring
//! cells always agree on shared faces and the extracted surface is
//! watertight with no ambiguous cases.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::geometry::TriMesh;

use super::{LabelVolume, VolumeError};

/// Scalar samples on a regular node grid.
#[derive(Debug, Clone)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub values: Vec<f32>,
}

impl ScalarGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        Self { dims, spacing, origin, values: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn node_position(&self, x: usize, y: usize, z: usize) -> Point3<f64> {
        Point3::new(
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        )
    }

    /// Fills the grid by sampling `f` at every node position.
    pub fn sample(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        mut f: impl FnMut(Point3<f64>) -> f64,
    ) -> Self {
        let mut g = Self::new(dims, spacing, origin);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = g.index(x, y, z);
                    g.values[i] = f(g.node_position(x, y, z)) as f32;
                }
            }
        }
        g
    }
}

/// The six tetrahedra of the Kuhn subdivision as corner indices into the
/// cell's (dx,dy,dz)-bit corner code.
const TETS: [[u8; 4]; 6] = [
    [0, 1, 3, 7], // +x +y +z
    [0, 1, 5, 7], // +x +z +y
    [0, 2, 3, 7], // +y +x +z
    [0, 2, 6, 7], // +y +z +x
    [0, 4, 5, 7], // +z +x +y
    [0, 4, 6, 7], // +z +y +x
];

/// Extracts the `iso` level set. Nodes with value ≥ iso count as inside;
/// triangles are oriented with outward normals (pointing toward lower
/// values).
pub fn marching_tets(grid: &ScalarGrid, iso: f64) -> TriMesh {
    let [nx, ny, nz] = grid.dims;
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<(u32, u32), u32> = HashMap::new();

    let node_id = |x: usize, y: usize, z: usize| (x + nx * (y + ny * z)) as u32;

    let mut corner_ids = [0u32; 8];
    let mut corner_vals = [0f64; 8];
    let mut corner_pos = [Point3::origin(); 8];

    for z in 0..nz.saturating_sub(1) {
        for y in 0..ny.saturating_sub(1) {
            for x in 0..nx.saturating_sub(1) {
                let mut any_in = false;
                let mut any_out = false;
                for c in 0..8usize {
                    let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                    let (px, py, pz) = (x + dx, y + dy, z + dz);
                    corner_ids[c] = node_id(px, py, pz);
                    let v = grid.values[grid.index(px, py, pz)] as f64;
                    corner_vals[c] = v;
                    corner_pos[c] = grid.node_position(px, py, pz);
                    if v >= iso {
                        any_in = true;
                    } else {
                        any_out = true;
                    }
                }
                if !any_in || !any_out {
                    continue;
                }
                for tet in &TETS {
                    emit_tet(
                        tet,
                        &corner_ids,
                        &corner_vals,
                        &corner_pos,
                        iso,
                        &mut edge_vertex,
                        &mut vertices,
                        &mut triangles,
                    );
                }
            }
        }
    }
    TriMesh { vertices, triangles }
}

#[allow(clippy::too_many_arguments)]
fn emit_tet(
    tet: &[u8; 4],
    ids: &[u32; 8],
    vals: &[f64; 8],
    pos: &[Point3<f64>; 8],
    iso: f64,
    edge_vertex: &mut HashMap<(u32, u32), u32>,
    vertices: &mut Vec<Point3<f64>>,
    triangles: &mut Vec<[u32; 3]>,
) {
    let mut inside: Vec<usize> = Vec::with_capacity(4);
    let mut outside: Vec<usize> = Vec::with_capacity(4);
    for &c in tet {
        if vals[c as usize] >= iso {
            inside.push(c as usize);
        } else {
            outside.push(c as usize);
        }
    }
    if inside.is_empty() || outside.is_empty() {
        return;
    }

    let mut edge_point = |a: usize, b: usize| -> u32 {
        let key = if ids[a] < ids[b] { (ids[a], ids[b]) } else { (ids[b], ids[a]) };
        *edge_vertex.entry(key).or_insert_with(|| {
            let (lo, hi) = if ids[a] < ids[b] { (a, b) } else { (b, a) };
            let denom = vals[hi] - vals[lo];
            let t = if denom.abs() < 1e-30 {
                0.5
            } else {
                ((iso - vals[lo]) / denom).clamp(1e-4, 1.0 - 1e-4)
            };
            vertices.push(Point3::from(pos[lo].coords + t * (pos[hi] - pos[lo])));
            (vertices.len() - 1) as u32
        })
    };

    let mut out_centroid = Vector3::zeros();
    for &o in &outside {
        out_centroid += pos[o].coords;
    }
    out_centroid /= outside.len() as f64;
    let mut in_centroid = Vector3::zeros();
    for &i in &inside {
        in_centroid += pos[i].coords;
    }
    in_centroid /= inside.len() as f64;
    let outward = out_centroid - in_centroid;

    let push_oriented =
        |a: u32, b: u32, c: u32, vertices: &Vec<Point3<f64>>, triangles: &mut Vec<[u32; 3]>| {
            if a == b || b == c || a == c {
                return;
            }
            let pa = vertices[a as usize];
            let pb = vertices[b as usize];
            let pc = vertices[c as usize];
            let n = (pb - pa).cross(&(pc - pa));
            if n.dot(&outward) >= 0.0 {
                triangles.push([a, b, c]);
            } else {
                triangles.push([a, c, b]);
            }
        };

    match inside.len() {
        1 => {
            let a = inside[0];
            let p0 = edge_point(a, outside[0]);
            let p1 = edge_point(a, outside[1]);
            let p2 = edge_point(a, outside[2]);
            push_oriented(p0, p1, p2, vertices, triangles);
        }
        3 => {
            let o = outside[0];
            let p0 = edge_point(o, inside[0]);
            let p1 = edge_point(o, inside[1]);
            let p2 = edge_point(o, inside[2]);
            push_oriented(p0, p1, p2, vertices, triangles);
        }
        2 => {
            let (a, b) = (inside[0], inside[1]);
            let (c, d) = (outside[0], outside[1]);
            let ac = edge_point(a, c);
            let ad = edge_point(a, d);
            let bc = edge_point(b, c);
            let bd = edge_point(b, d);
            push_oriented(ac, ad, bd, vertices, triangles);
            push_oriented(ac, bd, bc, vertices, triangles);
        }
        _ => unreachable!(),
    }
}

/// Isosurface of the binary `label` indicator at level 0.5, vertices in
/// world millimetres. The volume is conceptually padded with background so
/// the surface closes at the grid boundary.
pub fn marching_cubes(v: &LabelVolume, label: u16) -> Result<TriMesh, VolumeError> {
    if v.count_label(label) == 0 {
        return Err(VolumeError::EmptyMask(label));
    }
    let dims = [v.dims[0] + 2, v.dims[1] + 2, v.dims[2] + 2];
    let origin = [
        v.origin[0] - v.spacing[0],
        v.origin[1] - v.spacing[1],
        v.origin[2] - v.spacing[2],
    ];
    let mut grid = ScalarGrid::new(dims, v.spacing, origin);
    for z in 0..v.dims[2] {
        for y in 0..v.dims[1] {
            for x in 0..v.dims[0] {
                if v.get(x, y, z) == label {
                    let i = grid.index(x + 1, y + 1, z + 1);
                    grid.values[i] = 1.0;
                }
            }
        }
    }
    Ok(marching_tets(&grid, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelVolume;

    fn sphere_volume(r: f64, spacing: f64) -> LabelVolume {
        let n = (2.0 * r / spacing) as usize + 6;
        let mut v = LabelVolume::new([n, n, n], [spacing; 3], [0.0; 3]).unwrap();
        let c = (n / 2) as f64 * spacing;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let d = ((x as f64 * spacing - c).powi(2)
                        + (y as f64 * spacing - c).powi(2)
                        + (z as f64 * spacing - c).powi(2))
                    .sqrt();
                    if d <= r {
                        v.set(x, y, z, 1);
                    }
                }
            }
        }
        v
    }

    #[test]
    fn sphere_mesh_is_closed_and_accurate() {
        let v = sphere_volume(10.0, 1.0);
        let m = marching_cubes(&v, 1).unwrap();
        assert!(m.is_watertight());
        let c = ((v.dims[0] / 2) as f64) * v.spacing[0];
        let mut acc = 0.0;
        for p in &m.vertices {
            let d = ((p.x - c).powi(2) + (p.y - c).powi(2) + (p.z - c).powi(2)).sqrt();
            acc += (d - 10.0).powi(2);
        }
        let rmse = (acc / m.vertices.len() as f64).sqrt();
        assert!(rmse <= 0.5, "rmse {rmse}");
        // volume within 5% of the analytic sphere
        let vol = m.signed_volume();
        let truth = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!((vol - truth).abs() / truth < 0.05, "vol {vol} vs {truth}");
    }

    #[test]
    fn single_voxel_gives_small_closed_mesh() {
        let mut v = LabelVolume::new([5, 5, 5], [1.0; 3], [0.0; 3]).unwrap();
        v.set(2, 2, 2, 1);
        let m = marching_cubes(&v, 1).unwrap();
        assert!(m.is_watertight());
        let vol = m.signed_volume();
        assert!(vol > 0.0 && vol <= 1.0, "vol {vol}");
    }

    #[test]
    fn solid_box_volume() {
        let mut v = LabelVolume::new([20, 14, 10], [1.0; 3], [0.0; 3]).unwrap();
        for z in 1..9 {
            for y in 1..13 {
                for x in 1..19 {
                    v.set(x, y, z, 1);
                }
            }
        }
        let m = marching_cubes(&v, 1).unwrap();
        assert!(m.is_watertight());
        let vol = m.signed_volume();
        let truth = 18.0 * 12.0 * 8.0; // surface passes half a voxel outside
        assert!((vol - truth).abs() / truth < 0.05, "vol {vol} vs {truth}");
    }

    #[test]
    fn empty_mask_is_error() {
        let v = LabelVolume::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        assert!(marching_cubes(&v, 1).is_err());
    }

    #[test]
    fn euler_characteristic_even_for_sphere() {
        let v = sphere_volume(6.0, 1.0);
        let m = marching_cubes(&v, 1).unwrap();
        let verts = m.vertices.len() as i64;
        let faces = m.triangles.len() as i64;
        let edges = faces * 3 / 2; // closed manifold: every edge shared by 2
        let euler = verts - edges + faces;
        assert_eq!(euler % 2, 0);
        assert_eq!(euler, 2); // genus 0
    }

    #[test]
    fn smooth_field_extraction_is_subvoxel() {
        // sample an analytic sphere SDF; vertices should sit on the surface
        let grid = ScalarGrid::sample([24, 24, 24], [1.0; 3], [0.0; 3], |p| {
            10.0 - (p - nalgebra::Point3::new(12.0, 12.0, 12.0)).norm()
        });
        let m = marching_tets(&grid, 0.0);
        assert!(m.is_watertight());
        for p in &m.vertices {
            let d = (p - nalgebra::Point3::new(12.0, 12.0, 12.0)).norm();
            assert!((d - 10.0).abs() < 0.05, "distance {d}");
        }
    }
}
