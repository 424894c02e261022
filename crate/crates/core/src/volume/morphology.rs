//! Binary morphology and connected components on label masks.

use super::{LabelVolume, StructuringElement};

fn erode(mask: &[bool], dims: [usize; 3], se: &StructuringElement) -> Vec<bool> {
    apply(mask, dims, se, true)
}

fn dilate(mask: &[bool], dims: [usize; 3], se: &StructuringElement) -> Vec<bool> {
    apply(mask, dims, se, false)
}

fn apply(mask: &[bool], dims: [usize; 3], se: &StructuringElement, erosion: bool) -> Vec<bool> {
    let offsets = se.offsets();
    let [nx, ny, nz] = dims;
    let mut out = vec![false; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut val = erosion;
                for &(dx, dy, dz) in &offsets {
                    let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    let inside = px >= 0
                        && py >= 0
                        && pz >= 0
                        && (px as usize) < nx
                        && (py as usize) < ny
                        && (pz as usize) < nz;
                    // outside the grid counts as background
                    let m = inside && mask[px as usize + nx * (py as usize + ny * pz as usize)];
                    if erosion {
                        if !m {
                            val = false;
                            break;
                        }
                    } else if m {
                        val = true;
                        break;
                    }
                }
                out[x + nx * (y + ny * z)] = val;
            }
        }
    }
    out
}

fn replace_mask(v: &LabelVolume, label: u16, new_mask: &[bool]) -> LabelVolume {
    let mut out = v.clone();
    for (i, l) in out.labels.iter_mut().enumerate() {
        if *l == label && !new_mask[i] {
            *l = 0;
        } else if *l == 0 && new_mask[i] {
            *l = label;
        }
        // voxels carrying other labels are never touched
    }
    out
}

/// Morphological opening (erosion then dilation) of the `label` mask.
pub fn morph_open(v: &LabelVolume, label: u16, se: &StructuringElement) -> LabelVolume {
    let mask = v.mask(label);
    let opened = dilate(&erode(&mask, v.dims, se), v.dims, se);
    // opening is anti-extensive; keep it that way even where dilation would
    // spill into voxels owned by other labels
    let clipped: Vec<bool> = opened.iter().zip(&mask).map(|(&o, &m)| o && m).collect();
    replace_mask(v, label, &clipped)
}

/// Morphological closing (dilation then erosion) of the `label` mask.
/// Voxels carrying other labels are never claimed.
pub fn morph_close(v: &LabelVolume, label: u16, se: &StructuringElement) -> LabelVolume {
    let mask = v.mask(label);
    let closed = erode(&dilate(&mask, v.dims, se), v.dims, se);
    let grown: Vec<bool> = closed
        .iter()
        .enumerate()
        .map(|(i, &c)| mask[i] || (c && v.labels[i] == 0))
        .collect();
    replace_mask(v, label, &grown)
}

/// Keeps only the largest 26-connected component of the `label` mask.
/// Ties go to the component containing the smallest linear voxel index.
pub fn largest_component(v: &LabelVolume, label: u16) -> LabelVolume {
    let comps = connected_components_26(&v.mask(label), v.dims);
    let best = comps
        .iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .cloned();
    let mut out = v.clone();
    match best {
        None => out,
        Some(keep) => {
            for l in out.labels.iter_mut() {
                if *l == label {
                    *l = 0;
                }
            }
            for i in keep {
                out.labels[i] = label;
            }
            out
        }
    }
}

/// 26-connected components; each component's voxel list is sorted ascending,
/// components ordered by their minimum index.
pub fn connected_components_26(mask: &[bool], dims: [usize; 3]) -> Vec<Vec<usize>> {
    let [nx, ny, nz] = dims;
    let mut visited = vec![false; mask.len()];
    let mut comps = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || visited[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        visited[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            for dz in -1i64..=1 {
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
                        let j = px + nx * (py + ny * pz);
                        if mask[j] && !visited[j] {
                            visited[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{LabelVolume, StructuringElement};

    fn vol(dims: [usize; 3]) -> LabelVolume {
        LabelVolume::new(dims, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn open_removes_isolated_voxel() {
        let mut v = vol([8, 8, 8]);
        v.set(4, 4, 4, 1);
        let out = morph_open(&v, 1, &StructuringElement::ball(1));
        assert_eq!(out.count_label(1), 0);
    }

    #[test]
    fn open_keeps_solid_cube() {
        let mut v = vol([14, 14, 14]);
        for z in 2..12 {
            for y in 2..12 {
                for x in 2..12 {
                    v.set(x, y, z, 1);
                }
            }
        }
        // cube element translates tile the cube exactly
        let out = morph_open(&v, 1, &StructuringElement::cube(1));
        assert_eq!(out.count_label(1), 1000);
        // the ball (6-neighbourhood) element rounds off edges and corners but
        // leaves the core and face interiors intact
        let out = morph_open(&v, 1, &StructuringElement::ball(1));
        assert_eq!(out.count_label(1), 1000 - 104);
        assert_eq!(out.get(5, 5, 2), 1);
        assert_eq!(out.get(2, 2, 2), 0);
    }

    #[test]
    fn close_fills_interior_hole() {
        let mut v = vol([9, 9, 9]);
        for z in 2..7 {
            for y in 2..7 {
                for x in 2..7 {
                    v.set(x, y, z, 1);
                }
            }
        }
        v.set(4, 4, 4, 0);
        let out = morph_close(&v, 1, &StructuringElement::ball(1));
        assert_eq!(out.get(4, 4, 4), 1);
    }

    #[test]
    fn close_on_empty_is_identity() {
        let v = vol([6, 6, 6]);
        let out = morph_close(&v, 1, &StructuringElement::ball(1));
        assert_eq!(out.labels, v.labels);
    }

    #[test]
    fn other_labels_untouched() {
        let mut v = vol([8, 8, 8]);
        v.set(1, 1, 1, 2);
        v.set(4, 4, 4, 1);
        let out = morph_open(&v, 1, &StructuringElement::ball(1));
        assert_eq!(out.get(1, 1, 1), 2);
    }

    #[test]
    fn largest_component_keeps_big_blob() {
        let mut v = vol([20, 8, 8]);
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..4 {
                    v.set(x, y, z, 1);
                }
            }
        }
        v.set(15, 4, 4, 1);
        v.set(16, 4, 4, 1);
        let out = largest_component(&v, 1);
        assert_eq!(out.count_label(1), 100);
        assert_eq!(out.get(15, 4, 4), 0);
    }

    #[test]
    fn equal_components_tie_break_on_min_index() {
        let mut v = vol([20, 4, 4]);
        // two 2-voxel blobs; the one starting at the smaller index wins
        v.set(2, 0, 0, 1);
        v.set(3, 0, 0, 1);
        v.set(12, 0, 0, 1);
        v.set(13, 0, 0, 1);
        let out = largest_component(&v, 1);
        assert_eq!(out.get(2, 0, 0), 1);
        assert_eq!(out.get(12, 0, 0), 0);
    }

    #[test]
    fn single_blob_unchanged() {
        let mut v = vol([8, 8, 8]);
        for x in 2..5 {
            v.set(x, 3, 3, 1);
        }
        let out = largest_component(&v, 1);
        assert_eq!(out.labels, v.labels);
    }
}
