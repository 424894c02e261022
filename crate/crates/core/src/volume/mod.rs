//! Voxel-domain post-processing of segmentation label volumes.

use thiserror::Error;

mod distance;
mod marching;
mod morphology;
mod nrrd;
mod watershed;

pub use distance::distance_transform;
pub use marching::{marching_cubes, marching_tets, ScalarGrid};
pub use morphology::{largest_component, morph_close, morph_open};
pub use nrrd::{read_nrrd, read_nrrd_file, write_nrrd, write_nrrd_file};
pub use watershed::watershed_split;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume dimensions do not match: {a:?} vs {b:?}")]
    DimsMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("no voxels carry label {0}")]
    EmptyMask(u16),
    #[error("only {found} distance maxima available for {requested} seeds")]
    FewerMaximaThanSeeds { requested: usize, found: usize },
    #[error("invalid volume: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed nrrd: {0}")]
    MalformedNrrd(String),
}

/// 3D integer label grid with physical spacing and origin.
///
/// `labels` is indexed x-fastest: `index = x + dims[0]*(y + dims[1]*z)`.
/// Label 0 is background, 1 femur, 2 tibia by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub dims: [usize; 3],
    /// mm per voxel along each axis.
    pub spacing: [f64; 3],
    /// World position (mm) of the center of voxel (0,0,0).
    pub origin: [f64; 3],
    pub labels: Vec<u16>,
    /// NRRD header fields not interpreted by this crate, preserved on
    /// round-trip in file order.
    pub extra_header: Vec<(String, String)>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::Invalid("dims must be positive".into()));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(VolumeError::Invalid("spacing must be positive".into()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            labels: vec![0; dims[0] * dims[1] * dims[2]],
            extra_header: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.dims[0];
        let y = (index / self.dims[0]) % self.dims[1];
        let z = index / (self.dims[0] * self.dims[1]);
        (x, y, z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u16) {
        let i = self.index(x, y, z);
        self.labels[i] = v;
    }

    /// World coordinates (mm) of a voxel center.
    pub fn world(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    pub fn mask(&self, label: u16) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    pub fn count_label(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Erosion/dilation footprint in voxel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    pub shape: SeShape,
    pub radius: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeShape {
    Ball,
    Cube,
}

impl StructuringElement {
    pub fn ball(radius: usize) -> Self {
        Self { shape: SeShape::Ball, radius }
    }

    pub fn cube(radius: usize) -> Self {
        Self { shape: SeShape::Cube, radius }
    }

    /// Voxel offsets covered by the element, centered at the origin.
    pub fn offsets(&self) -> Vec<(i64, i64, i64)> {
        let r = self.radius as i64;
        let mut out = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let keep = match self.shape {
                        SeShape::Cube => true,
                        SeShape::Ball => dx * dx + dy * dy + dz * dz <= r * r,
                    };
                    if keep {
                        out.push((dx, dy, dz));
                    }
                }
            }
        }
        out
    }
}

/// Dice overlap coefficient of the `label` masks of two volumes.
/// Both masks empty counts as perfect agreement (1.0).
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u16) -> Result<f64, VolumeError> {
    if a.dims != b.dims {
        return Err(VolumeError::DimsMismatch { a: a.dims, b: b.dims });
    }
    let mut na = 0usize;
    let mut nb = 0usize;
    let mut inter = 0usize;
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        let ia = la == label;
        let ib = lb == label;
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_identical_and_disjoint() {
        let mut a = LabelVolume::new([4, 4, 1], [1.0; 3], [0.0; 3]).unwrap();
        let mut b = a.clone();
        a.set(0, 0, 0, 1);
        a.set(1, 0, 0, 1);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        b.set(3, 3, 0, 1);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn dice_half_overlap() {
        // |A| = 4, |B| = 4, overlap 2 → 0.5
        let mut a = LabelVolume::new([4, 4, 1], [1.0; 3], [0.0; 3]).unwrap();
        let mut b = a.clone();
        for x in 0..4 {
            a.set(x, 0, 0, 1);
            b.set(x, 0, 0, if x >= 2 { 1 } else { 0 });
        }
        b.set(0, 1, 0, 1);
        b.set(1, 1, 0, 1);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.5);
    }

    #[test]
    fn dice_empty_masks_is_one() {
        let a = LabelVolume::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
    }

    #[test]
    fn dims_mismatch_rejected() {
        let a = LabelVolume::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let b = LabelVolume::new([3, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        assert!(dice(&a, &b, 1).is_err());
    }

    #[test]
    fn ball_r0_is_single_voxel() {
        assert_eq!(StructuringElement::ball(0).offsets(), vec![(0, 0, 0)]);
    }

    #[test]
    fn ball_r1_is_6_neighbourhood_plus_center() {
        assert_eq!(StructuringElement::ball(1).offsets().len(), 7);
        assert_eq!(StructuringElement::cube(1).offsets().len(), 27);
    }
}
