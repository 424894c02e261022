//! Surface perturbations: extremity cropping and osteophyte bumps.

use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::TriMesh;

/// Keeps triangles whose centroid lies in the proximal `proximal_frac` or
/// distal `distal_frac` of the mesh's long-axis extent. The long axis is
/// the axis-aligned bounding-box direction of largest extent.
pub fn crop_extremities(mesh: &TriMesh, proximal_frac: f64, distal_frac: f64) -> TriMesh {
    assert!(proximal_frac > 0.0 && distal_frac > 0.0, "fractions must be positive");
    assert!(proximal_frac + distal_frac < 1.0, "fractions must sum below 1");
    let (lo, hi) = mesh.aabb();
    let extents = [hi.x - lo.x, hi.y - lo.y, hi.z - lo.z];
    let axis = (0..3).max_by(|&a, &b| extents[a].partial_cmp(&extents[b]).unwrap()).unwrap();
    let span = extents[axis];
    let hi_cut = hi[axis] - proximal_frac * span;
    let lo_cut = lo[axis] + distal_frac * span;

    let mut keep_tris = Vec::new();
    for (t, _) in mesh.triangles.iter().enumerate() {
        let c = mesh.triangle_centroid(t);
        if c[axis] >= hi_cut || c[axis] <= lo_cut {
            keep_tris.push(t);
        }
    }
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(keep_tris.len());
    for t in keep_tris {
        let mut tri = [0u32; 3];
        for (k, &vi) in mesh.triangles[t].iter().enumerate() {
            if remap[vi as usize] == u32::MAX {
                remap[vi as usize] = vertices.len() as u32;
                vertices.push(mesh.vertices[vi as usize]);
            }
            tri[k] = remap[vi as usize];
        }
        triangles.push(tri);
    }
    TriMesh { vertices, triangles }
}

/// Adds `count` Gaussian bumps of the given apex `height` (mm) and
/// `footprint` (mm, ≈ 2σ) at seeded random sites within the joint-end
/// quarters of the long axis, displacing vertices along their normals.
/// Generative ground truth is never derived from the perturbed surface.
pub fn add_osteophytes(
    mesh: &TriMesh,
    count: usize,
    height: f64,
    footprint: f64,
    seed: u64,
) -> TriMesh {
    assert!(height > 0.0 && footprint > 0.0, "height and footprint must be positive");
    if count == 0 {
        return mesh.clone();
    }
    let (lo, hi) = mesh.aabb();
    let extents = [hi.x - lo.x, hi.y - lo.y, hi.z - lo.z];
    let axis = (0..3).max_by(|&a, &b| extents[a].partial_cmp(&extents[b]).unwrap()).unwrap();
    let span = extents[axis];
    let candidates: Vec<usize> = (0..mesh.vertices.len())
        .filter(|&i| {
            let c = mesh.vertices[i][axis];
            c <= lo[axis] + 0.25 * span || c >= hi[axis] - 0.25 * span
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = candidates.clone();
    shuffled.shuffle(&mut rng);
    // keep bump sites mutually separated so bumps stay distinct
    let min_sep2 = (2.0 * footprint) * (2.0 * footprint);
    let mut sites: Vec<usize> = Vec::new();
    for c in shuffled {
        if sites.len() == count {
            break;
        }
        let vc = mesh.vertices[c];
        if sites.iter().all(|&s| (mesh.vertices[s] - vc).norm_squared() >= min_sep2) {
            sites.push(c);
        }
    }

    let normals = mesh.vertex_normals();
    let sigma = 0.5 * footprint;
    let cutoff2 = (3.0 * sigma) * (3.0 * sigma);
    let mut out = mesh.vertices.clone();
    for &s in &sites {
        let center: Point3<f64> = mesh.vertices[s];
        for (i, v) in mesh.vertices.iter().enumerate() {
            let d2 = (v - center).norm_squared();
            if d2 > cutoff2 {
                continue;
            }
            let amp = height * (-d2 / (2.0 * sigma * sigma)).exp();
            out[i] += normals[i] * amp;
        }
    }
    TriMesh { vertices: out, triangles: mesh.triangles.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_bone_at, BoneParams};

    fn coarse_femur() -> TriMesh {
        generate_bone_at(&BoneParams::default_femur(), 5.0).unwrap().0
    }

    #[test]
    fn wide_crop_keeps_nearly_everything() {
        let m = coarse_femur();
        let c = crop_extremities(&m, 0.5, 0.49);
        assert!(c.surface_area() > 0.95 * m.surface_area());
    }

    #[test]
    fn narrow_crop_gives_two_open_patches() {
        let m = coarse_femur();
        let c = crop_extremities(&m, 0.15, 0.15);
        assert!(!c.boundary_edges().is_empty());
        // two disjoint patches: z gap between them
        let (lo, hi) = m.aabb();
        let span = hi.z - lo.z;
        for v in &c.vertices {
            assert!(
                v.z <= lo.z + 0.20 * span || v.z >= hi.z - 0.20 * span,
                "vertex in the excluded mid-shaft at z={}",
                v.z
            );
        }
    }

    #[test]
    fn cropped_area_tracks_fractions() {
        let m = coarse_femur();
        let c = crop_extremities(&m, 0.25, 0.25);
        let frac = c.surface_area() / m.surface_area();
        // epiphyses carry more area than the shaft, so allow a generous band
        // around the nominal 0.5
        assert!((frac - 0.5).abs() < 0.25, "area fraction {frac}");
    }

    #[test]
    fn zero_count_is_identity() {
        let m = coarse_femur();
        let o = add_osteophytes(&m, 0, 3.0, 5.0, 7);
        assert_eq!(o.vertices, m.vertices);
    }

    #[test]
    fn apex_displacement_matches_height() {
        let m = coarse_femur();
        let o = add_osteophytes(&m, 3, 3.0, 5.0, 11);
        let mut max_disp = 0.0f64;
        for (a, b) in m.vertices.iter().zip(&o.vertices) {
            max_disp = max_disp.max((a - b).norm());
        }
        assert!((max_disp - 3.0).abs() / 3.0 < 0.05, "apex displacement {max_disp}");
    }

    #[test]
    fn same_seed_same_bumps() {
        let m = coarse_femur();
        let a = add_osteophytes(&m, 4, 3.0, 5.0, 42);
        let b = add_osteophytes(&m, 4, 3.0, 5.0, 42);
        assert_eq!(a.vertices, b.vertices);
    }
}
