//! Marker-based watershed splitting of a label mask.
//!
//! Markers are the strongest local maxima of the Euclidean distance
//! transform; flooding runs over the negated distance field with
//! 6-connectivity so regions cannot leak through diagonals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{distance_transform, morphology::connected_components_26, LabelVolume, VolumeError};

#[derive(PartialEq)]
struct QueueItem {
    dist: f64,
    /// Physical distance to this region's marker; on flat stretches of the
    /// distance field the closer marker wins, putting the split at the
    /// midline between markers.
    marker_dist: f64,
    /// Region preference for voxels exactly equidistant from two markers
    /// (e.g. the midplane between symmetric blobs). Derived from voxel
    /// parity so such ties alternate between regions instead of all going
    /// to the first-seeded marker.
    tie: u16,
    seq: u64,
    voxel: usize,
    region: u16,
}

impl Eq for QueueItem {}

impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on distance, then nearest marker, then parity preference,
        // then FIFO
        self.dist
            .partial_cmp(&other.dist)
            .unwrap()
            .then(
                other
                    .marker_dist
                    .partial_cmp(&self.marker_dist)
                    .unwrap(),
            )
            .then(other.tie.cmp(&self.tie))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Splits the `label` mask into `n_seeds` regions relabelled as
/// `label, label+1, …` in decreasing region-size order.
pub fn watershed_split(
    v: &LabelVolume,
    label: u16,
    n_seeds: usize,
) -> Result<LabelVolume, VolumeError> {
    assert!(n_seeds >= 2, "watershed needs at least two seeds");
    let mask = v.mask(label);
    if !mask.iter().any(|&m| m) {
        return Err(VolumeError::EmptyMask(label));
    }
    let dt = distance_transform(v, label);
    let max_dt = dt.iter().cloned().fold(0.0f64, f64::max);

    let maxima = suppressed_maxima(v, &mask, &dt, max_dt / 2.0);
    if maxima.len() < n_seeds {
        return Err(VolumeError::FewerMaximaThanSeeds {
            requested: n_seeds,
            found: maxima.len(),
        });
    }

    // flood from the n_seeds strongest markers
    let [nx, ny, nz] = v.dims;
    let mut region = vec![0u16; v.len()]; // 1-based region ids, 0 = unassigned
    let mut heap: BinaryHeap<QueueItem> = BinaryHeap::new();
    let mut seq = 0u64;
    let marker_pos: Vec<[f64; 3]> = maxima
        .iter()
        .take(n_seeds)
        .map(|&m| {
            let (x, y, z) = v.coords(m);
            [
                x as f64 * v.spacing[0],
                y as f64 * v.spacing[1],
                z as f64 * v.spacing[2],
            ]
        })
        .collect();
    let marker_dist = |i: usize, region: u16| {
        let (x, y, z) = v.coords(i);
        let m = &marker_pos[(region - 1) as usize];
        let d = [
            x as f64 * v.spacing[0] - m[0],
            y as f64 * v.spacing[1] - m[1],
            z as f64 * v.spacing[2] - m[2],
        ];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    };
    let tie_key = |i: usize, region: u16| {
        let (x, y, z) = v.coords(i);
        if (x + y + z) % 2 == 0 {
            region
        } else {
            u16::MAX - region
        }
    };
    for (r, &m) in maxima.iter().take(n_seeds).enumerate() {
        let region = (r + 1) as u16;
        heap.push(QueueItem {
            dist: dt[m],
            marker_dist: 0.0,
            tie: tie_key(m, region),
            seq,
            voxel: m,
            region,
        });
        seq += 1;
    }
    let neighbors6 = |i: usize| {
        let x = i % nx;
        let y = (i / nx) % ny;
        let z = i / (nx * ny);
        let mut out = [usize::MAX; 6];
        let mut n = 0;
        if x > 0 { out[n] = i - 1; n += 1; }
        if x + 1 < nx { out[n] = i + 1; n += 1; }
        if y > 0 { out[n] = i - nx; n += 1; }
        if y + 1 < ny { out[n] = i + nx; n += 1; }
        if z > 0 { out[n] = i - nx * ny; n += 1; }
        if z + 1 < nz { out[n] = i + nx * ny; n += 1; }
        (out, n)
    };
    while let Some(item) = heap.pop() {
        if region[item.voxel] != 0 {
            continue;
        }
        region[item.voxel] = item.region;
        let (neigh, n) = neighbors6(item.voxel);
        for &j in &neigh[..n] {
            if mask[j] && region[j] == 0 {
                heap.push(QueueItem {
                    dist: dt[j],
                    marker_dist: marker_dist(j, item.region),
                    tie: tie_key(j, item.region),
                    seq,
                    voxel: j,
                    region: item.region,
                });
                seq += 1;
            }
        }
    }

    // mask components that contained no marker never get flooded; attach each
    // to the region of its nearest labelled voxel so the output partitions
    // the input exactly
    let unlabeled: Vec<bool> = mask
        .iter()
        .enumerate()
        .map(|(i, &m)| m && region[i] == 0)
        .collect();
    if unlabeled.iter().any(|&u| u) {
        let labeled: Vec<usize> = (0..v.len()).filter(|&i| region[i] != 0).collect();
        for comp in connected_components_26(&unlabeled, v.dims) {
            let rep = comp[0];
            let (rx, ry, rz) = v.coords(rep);
            let mut best = (f64::INFINITY, 0u16);
            for &l in &labeled {
                let (x, y, z) = v.coords(l);
                let d = [
                    (x as f64 - rx as f64) * v.spacing[0],
                    (y as f64 - ry as f64) * v.spacing[1],
                    (z as f64 - rz as f64) * v.spacing[2],
                ];
                let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                if d2 < best.0 {
                    best = (d2, region[l]);
                }
            }
            for i in comp {
                region[i] = best.1;
            }
        }
    }

    // relabel regions in decreasing size order
    let mut sizes = vec![(0usize, usize::MAX, 0u16); n_seeds]; // (count, min index, id)
    for r in 0..n_seeds {
        sizes[r].2 = (r + 1) as u16;
    }
    for (i, &r) in region.iter().enumerate() {
        if r != 0 {
            let s = &mut sizes[(r - 1) as usize];
            s.0 += 1;
            s.1 = s.1.min(i);
        }
    }
    sizes.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut new_label = vec![0u16; n_seeds + 1];
    for (rank, s) in sizes.iter().enumerate() {
        new_label[s.2 as usize] = label + rank as u16;
    }

    let mut out = v.clone();
    for (i, &r) in region.iter().enumerate() {
        if r != 0 {
            out.labels[i] = new_label[r as usize];
        }
    }
    Ok(out)
}

/// Local maxima of the distance field inside the mask, greedily thinned so
/// that accepted maxima are at least `radius_mm` apart, strongest first.
fn suppressed_maxima(v: &LabelVolume, mask: &[bool], dt: &[f64], radius_mm: f64) -> Vec<usize> {
    let [nx, ny, nz] = v.dims;
    let mut candidates: Vec<usize> = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = v.index(x, y, z);
                if !mask[i] {
                    continue;
                }
                let mut is_max = true;
                'scan: for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if px < 0 || py < 0 || pz < 0 {
                                continue;
                            }
                            let (px, py, pz) = (px as usize, py as usize, pz as usize);
                            if px >= nx || py >= ny || pz >= nz {
                                continue;
                            }
                            if dt[v.index(px, py, pz)] > dt[i] {
                                is_max = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if is_max {
                    candidates.push(i);
                }
            }
        }
    }
    candidates.sort_by(|&a, &b| dt[b].partial_cmp(&dt[a]).unwrap().then(a.cmp(&b)));

    let mut accepted: Vec<usize> = Vec::new();
    for &c in &candidates {
        let (cx, cy, cz) = v.coords(c);
        let far_enough = accepted.iter().all(|&a| {
            let (ax, ay, az) = v.coords(a);
            let d = [
                (ax as f64 - cx as f64) * v.spacing[0],
                (ay as f64 - cy as f64) * v.spacing[1],
                (az as f64 - cz as f64) * v.spacing[2],
            ];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() > radius_mm
        });
        if far_enough {
            accepted.push(c);
        }
    }
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelVolume;

    fn two_spheres(overlap: f64) -> (LabelVolume, [f64; 3], [f64; 3], f64) {
        let r = 8.0f64;
        let dx = 2.0 * r - overlap;
        let mut v = LabelVolume::new([40, 20, 20], [1.0; 3], [0.0; 3]).unwrap();
        let c1 = [10.0, 10.0, 10.0];
        let c2 = [10.0 + dx, 10.0, 10.0];
        for z in 0..20 {
            for y in 0..20 {
                for x in 0..40 {
                    let p = [x as f64, y as f64, z as f64];
                    let d1 = (0..3).map(|i| (p[i] - c1[i]).powi(2)).sum::<f64>().sqrt();
                    let d2 = (0..3).map(|i| (p[i] - c2[i]).powi(2)).sum::<f64>().sqrt();
                    if d1 <= r || d2 <= r {
                        v.set(x, y, z, 1);
                    }
                }
            }
        }
        (v, c1, c2, r)
    }

    #[test]
    fn splits_overlapping_spheres() {
        let (v, c1, c2, r) = two_spheres(2.0);
        let out = watershed_split(&v, 1, 2).unwrap();
        // per-sphere dice against the analytic spheres
        for (center, lbl_candidates) in [(c1, [1u16, 2u16]), (c2, [1, 2])] {
            let mut best = 0.0f64;
            for lbl in lbl_candidates {
                let mut inter = 0usize;
                let mut na = 0usize;
                let mut nb = 0usize;
                for z in 0..20 {
                    for y in 0..20 {
                        for x in 0..40 {
                            let p = [x as f64, y as f64, z as f64];
                            let da =
                                (0..3).map(|i| (p[i] - center[i]).powi(2)).sum::<f64>().sqrt();
                            let in_a = da <= r;
                            let in_b = out.get(x, y, z) == lbl;
                            na += in_a as usize;
                            nb += in_b as usize;
                            inter += (in_a && in_b) as usize;
                        }
                    }
                }
                best = best.max(2.0 * inter as f64 / (na + nb) as f64);
            }
            assert!(best >= 0.99, "sphere dice {best}");
        }
    }

    #[test]
    fn partition_preserved() {
        let (v, _, _, _) = two_spheres(2.0);
        let before = v.count_label(1);
        let out = watershed_split(&v, 1, 2).unwrap();
        let after = out.count_label(1) + out.count_label(2);
        assert_eq!(before, after);
    }

    #[test]
    fn single_sphere_degenerate() {
        let mut v = LabelVolume::new([20, 20, 20], [1.0; 3], [0.0; 3]).unwrap();
        for z in 0..20 {
            for y in 0..20 {
                for x in 0..20 {
                    let d = ((x as f64 - 10.0).powi(2)
                        + (y as f64 - 10.0).powi(2)
                        + (z as f64 - 10.0).powi(2))
                    .sqrt();
                    if d <= 7.0 {
                        v.set(x, y, z, 1);
                    }
                }
            }
        }
        match watershed_split(&v, 1, 2) {
            Err(VolumeError::FewerMaximaThanSeeds { .. }) => {}
            Ok(out) => {
                let n1 = out.count_label(1);
                let n2 = out.count_label(2);
                let smaller = n1.min(n2) as f64;
                assert!(smaller / ((n1 + n2) as f64) < 0.05, "split should be lopsided");
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn separated_components_keep_their_voxels() {
        let mut v = LabelVolume::new([30, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        for z in 2..8 {
            for y in 2..8 {
                for x in 2..8 {
                    v.set(x, y, z, 1);
                }
            }
        }
        for z in 2..8 {
            for y in 2..8 {
                for x in 20..26 {
                    v.set(x, y, z, 1);
                }
            }
        }
        let out = watershed_split(&v, 1, 2).unwrap();
        // each blob must be uniformly one label
        let l1 = out.get(3, 3, 3);
        let l2 = out.get(21, 3, 3);
        assert_ne!(l1, l2);
        for z in 2..8 {
            for y in 2..8 {
                for x in 2..8 {
                    assert_eq!(out.get(x, y, z), l1);
                }
                for x in 20..26 {
                    assert_eq!(out.get(x, y, z), l2);
                }
            }
        }
    }
}

