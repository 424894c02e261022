//! Exact Euclidean distance transform with anisotropic spacing
//! (Felzenszwalb–Huttenlocher separable parabola envelope).

use super::LabelVolume;

const INF: f64 = 1e30;

/// Distance (mm) from each `label` voxel center to the nearest non-`label`
/// voxel center; 0 on voxels not carrying the label. The grid boundary
/// counts as background.
pub fn distance_transform(v: &LabelVolume, label: u16) -> Vec<f64> {
    let [nx, ny, nz] = v.dims;
    // pad by one background layer so the outside of the grid is background
    let (px, py, pz) = (nx + 2, ny + 2, nz + 2);
    let mut sq = vec![0.0f64; px * py * pz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if v.get(x, y, z) == label {
                    sq[(x + 1) + px * ((y + 1) + py * (z + 1))] = INF;
                }
            }
        }
    }

    // pass along x
    let mut line = vec![0.0f64; px.max(py).max(pz)];
    let mut out_line = vec![0.0f64; px.max(py).max(pz)];
    for z in 0..pz {
        for y in 0..py {
            for x in 0..px {
                line[x] = sq[x + px * (y + py * z)];
            }
            dt_1d(&line[..px], v.spacing[0], &mut out_line);
            for x in 0..px {
                sq[x + px * (y + py * z)] = out_line[x];
            }
        }
    }
    // pass along y
    for z in 0..pz {
        for x in 0..px {
            for y in 0..py {
                line[y] = sq[x + px * (y + py * z)];
            }
            dt_1d(&line[..py], v.spacing[1], &mut out_line);
            for y in 0..py {
                sq[x + px * (y + py * z)] = out_line[y];
            }
        }
    }
    // pass along z
    for y in 0..py {
        for x in 0..px {
            for z in 0..pz {
                line[z] = sq[x + px * (y + py * z)];
            }
            dt_1d(&line[..pz], v.spacing[2], &mut out_line);
            for z in 0..pz {
                sq[x + px * (y + py * z)] = out_line[z];
            }
        }
    }

    let mut out = vec![0.0f64; v.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if v.get(x, y, z) == label {
                    out[v.index(x, y, z)] =
                        sq[(x + 1) + px * ((y + 1) + py * (z + 1))].sqrt();
                }
            }
        }
    }
    out
}

/// 1D squared-distance transform with sample positions `i * spacing`.
fn dt_1d(f: &[f64], spacing: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v_idx = vec![0usize; n]; // parabola apex indices
    let mut z = vec![0.0f64; n + 1]; // envelope breakpoints
    let pos = |i: usize| i as f64 * spacing;

    let mut k = 0usize;
    v_idx[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        loop {
            let p = v_idx[k];
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p)))
                / (2.0 * pos(q) - 2.0 * pos(p));
            if s <= z[k] {
                if k == 0 {
                    v_idx[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v_idx[k] = q;
            z[k] = s;
            z[k + 1] = INF;
            break;
        }
    }

    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v_idx[k]);
        out[q] = d * d + f[v_idx[k]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelVolume;

    /// Brute-force all-pairs oracle with the same boundary convention.
    fn brute_force(v: &LabelVolume, label: u16) -> Vec<f64> {
        let [nx, ny, nz] = v.dims;
        let mut out = vec![0.0f64; v.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if v.get(x, y, z) != label {
                        continue;
                    }
                    let mut best = f64::INFINITY;
                    // scan a padded index range so the outside counts as background
                    for qz in -1..=nz as i64 {
                        for qy in -1..=ny as i64 {
                            for qx in -1..=nx as i64 {
                                let bg = qx < 0
                                    || qy < 0
                                    || qz < 0
                                    || qx >= nx as i64
                                    || qy >= ny as i64
                                    || qz >= nz as i64
                                    || v.get(qx as usize, qy as usize, qz as usize) != label;
                                if bg {
                                    let dx = (qx - x as i64) as f64 * v.spacing[0];
                                    let dy = (qy - y as i64) as f64 * v.spacing[1];
                                    let dz = (qz - z as i64) as f64 * v.spacing[2];
                                    best = best.min((dx * dx + dy * dy + dz * dz).sqrt());
                                }
                            }
                        }
                    }
                    out[v.index(x, y, z)] = best;
                }
            }
        }
        out
    }

    #[test]
    fn single_voxel_is_min_spacing() {
        let mut v = LabelVolume::new([5, 5, 5], [1.0; 3], [0.0; 3]).unwrap();
        v.set(2, 2, 2, 1);
        let d = distance_transform(&v, 1);
        assert!((d[v.index(2, 2, 2)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cube_center_matches_brute_force() {
        let mut v = LabelVolume::new([7, 7, 7], [1.0; 3], [0.0; 3]).unwrap();
        for z in 1..6 {
            for y in 1..6 {
                for x in 1..6 {
                    v.set(x, y, z, 1);
                }
            }
        }
        let d = distance_transform(&v, 1);
        assert!((d[v.index(3, 3, 3)] - 3.0).abs() < 1e-12);
        let oracle = brute_force(&v, 1);
        for (a, b) in d.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn anisotropic_slab() {
        // 1-voxel-thick slab in z at spacing (0.5, 0.5, 2): interior value 2.0
        let mut v = LabelVolume::new([9, 9, 3], [0.5, 0.5, 2.0], [0.0; 3]).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                v.set(x, y, 1, 1);
            }
        }
        let d = distance_transform(&v, 1);
        assert!((d[v.index(4, 4, 1)] - 2.0).abs() < 1e-12);
        let oracle = brute_force(&v, 1);
        for (a, b) in d.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn random_mask_matches_brute_force() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut v = LabelVolume::new([8, 7, 6], [1.0, 1.3, 0.7], [0.0; 3]).unwrap();
        for l in v.labels.iter_mut() {
            *l = if rng.gen_bool(0.5) { 1 } else { 0 };
        }
        let d = distance_transform(&v, 1);
        let oracle = brute_force(&v, 1);
        for (a, b) in d.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
