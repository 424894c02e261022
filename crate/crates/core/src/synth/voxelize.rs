//! Watertight-mesh voxelization by per-column ray parity.

use nalgebra::{Point3, Vector3};

use crate::geometry::TriBvh;
use crate::geometry::TriMesh;
use crate::volume::LabelVolume;

use super::SynthError;

/// Labels every voxel whose center lies inside the watertight mesh.
/// One column of +z rays per (x, y) voxel pair; a voxel center is inside
/// when an odd number of surface crossings lie below it.
pub fn voxelize(mesh: &TriMesh, spacing: [f64; 3], label: u16) -> Result<LabelVolume, SynthError> {
    assert!(spacing.iter().all(|&s| s > 0.0), "spacing must be positive");
    if !mesh.is_watertight() {
        return Err(SynthError::NonWatertight(mesh.boundary_edges().len()));
    }
    let (lo, hi) = mesh.aabb();
    let dims = [
        ((hi.x - lo.x) / spacing[0]).ceil() as usize + 3,
        ((hi.y - lo.y) / spacing[1]).ceil() as usize + 3,
        ((hi.z - lo.z) / spacing[2]).ceil() as usize + 3,
    ];
    let origin = [lo.x - spacing[0], lo.y - spacing[1], lo.z - spacing[2]];
    let mut v = LabelVolume::new(dims, spacing, origin)
        .map_err(|e| SynthError::InvalidParams(e.to_string()))?;

    let bvh = TriBvh::build(mesh);
    let dir = Vector3::new(0.0, 0.0, 1.0);
    let z_start = origin[2] - spacing[2];
    let t_max = hi.z - z_start + 2.0 * spacing[2];
    // tiny irrational column jitter avoids rays grazing mesh edges/vertices
    let jitter = [spacing[0] * 1e-4 * 0.618_033_988_7, spacing[1] * 1e-4 * 0.414_213_562_4];
    for y in 0..dims[1] {
        for x in 0..dims[0] {
            let w = v.world(x, y, 0);
            let o = Point3::new(w[0] + jitter[0], w[1] + jitter[1], z_start);
            let mut ts = bvh.ray_hits(&o, &dir, t_max);
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if ts.is_empty() {
                continue;
            }
            let mut k = 0usize;
            for z in 0..dims[2] {
                let zc = origin[2] + z as f64 * spacing[2] - z_start;
                while k < ts.len() && ts[k] < zc {
                    k += 1;
                }
                if k % 2 == 1 {
                    v.set(x, y, z, label);
                }
            }
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::surface_rmse;
    use crate::volume::marching_cubes;
    use nalgebra::Point3;

    fn unit_cube() -> TriMesh {
        // 12 triangles, outward orientation
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 0.0, 1.0),
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(0.0, 1.0, 1.0),
        ];
        let t = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriMesh::new(v, t).unwrap()
    }

    #[test]
    fn unit_cube_volume_within_two_percent() {
        let vol = voxelize(&unit_cube(), [0.1; 3], 1).unwrap();
        let n = vol.count_label(1);
        assert!((n as f64 - 1000.0).abs() / 1000.0 < 0.02, "count {n}");
    }

    #[test]
    fn round_trip_through_marching_cubes() {
        let m = crate::synth::generate_bone_at(
            &crate::synth::BoneParams::default_femur(),
            4.0,
        )
        .unwrap()
        .0;
        let spacing = 2.0;
        let vol = voxelize(&m, [spacing; 3], 1).unwrap();
        let back = marching_cubes(&vol, 1).unwrap();
        let rmse = surface_rmse(&back, &m, 0).unwrap();
        assert!(rmse <= 0.5 * spacing, "rmse {rmse}");
    }

    #[test]
    fn open_mesh_rejected() {
        let mut cube = unit_cube();
        cube.triangles.pop();
        assert!(matches!(voxelize(&cube, [0.2; 3], 1), Err(SynthError::NonWatertight(_))));
    }
}
