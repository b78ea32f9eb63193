//! Dense 3D grids and the numeric kernels shared by the rest of the crate.
//!
//! Voxels are stored in `(z, y, x)` order with `x` varying fastest, which is
//! also the on-disk order of NIfTI payloads. Spacing is in millimetres and is
//! listed in the same `(z, y, x)` order as the dimensions.

mod distance;
mod fft;
mod morphology;
mod resample;
pub(crate) mod smooth;
mod stats;

pub use distance::{squared_distance_transform, surface_voxels};
pub use fft::{fft3, ifft3, Spectrum};
pub use morphology::{close, dilate, erode, fill_holes, fill_holes_and_close};
pub use resample::{resample, resample_with, resampled_spacing, Interpolation};
pub use smooth::{gaussian_kernel, gaussian_smooth, gaussian_smooth_vox, gaussian_smooth_with};
pub use stats::{otsu_threshold, percentile, percentile_of_sorted};

use thiserror::Error;

/// Grid size as `(D, H, W)`.
pub type Dims = [usize; 3];
/// Voxel spacing in mm as `(dz, dy, dx)`.
pub type Spacing = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("data length {actual} does not match dims {dims:?}")]
    ShapeMismatch { dims: Dims, actual: usize },
    #[error("every dimension must be at least 1, got {0:?}")]
    ZeroDim(Dims),
    #[error("spacing must be positive and finite, got {0:?}")]
    InvalidSpacing(Spacing),
    #[error("grids differ: {0:?} vs {1:?}")]
    GridMismatch(Dims, Dims),
    #[error("histogram has a single distinct value")]
    DegenerateHistogram,
    #[error("region is empty")]
    EmptyRegion,
    #[error("FFT requires power-of-two dims, got {0:?}")]
    NonPowerOfTwoDims(Dims),
}

pub type Result<T> = std::result::Result<T, VolumeError>;

fn check_grid(dims: Dims, spacing: Spacing, len: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::ZeroDim(dims));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(VolumeError::InvalidSpacing(spacing));
    }
    if dims[0] * dims[1] * dims[2] != len {
        return Err(VolumeError::ShapeMismatch { dims, actual: len });
    }
    Ok(())
}

#[inline]
pub(crate) fn linear_index(dims: Dims, z: usize, y: usize, x: usize) -> usize {
    (z * dims[1] + y) * dims[2] + x
}

#[inline]
pub(crate) fn unravel(dims: Dims, i: usize) -> [usize; 3] {
    let x = i % dims[2];
    let y = (i / dims[2]) % dims[1];
    let z = i / (dims[1] * dims[2]);
    [z, y, x]
}

/// Face neighbours in `(dz, dy, dx)`.
pub(crate) const FACE_OFFSETS: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// All 26 neighbours of a voxel, in lexicographic order.
pub(crate) fn offsets26() -> impl Iterator<Item = [isize; 3]> {
    (-1..=1isize).flat_map(|dz| {
        (-1..=1isize).flat_map(move |dy| {
            (-1..=1isize)
                .filter(move |&dx| !(dz == 0 && dy == 0 && dx == 0))
                .map(move |dx| [dz, dy, dx])
        })
    })
}

#[inline]
pub(crate) fn offset(dims: Dims, p: [usize; 3], d: [isize; 3]) -> Option<[usize; 3]> {
    let mut q = [0usize; 3];
    for a in 0..3 {
        let v = p[a] as isize + d[a];
        if v < 0 || v >= dims[a] as isize {
            return None;
        }
        q[a] = v as usize;
    }
    Some(q)
}

/// Scalar field on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        check_grid(dims, spacing, data.len())?;
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn from_fn<F>(dims: Dims, spacing: Spacing, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f32,
    {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        linear_index(self.dims, z, y, x)
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f32) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Result<Self> {
        check_grid(self.dims, spacing, self.data.len())?;
        self.spacing = spacing;
        Ok(self)
    }

    /// Applies `f` voxel-wise.
    pub fn map<F: Fn(f32) -> f32>(&self, f: F) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_grid(&self, other_dims: Dims) -> Result<()> {
        if self.dims != other_dims {
            return Err(VolumeError::GridMismatch(self.dims, other_dims));
        }
        Ok(())
    }

    /// Minimum and maximum over finite voxels.
    pub fn finite_min_max(&self) -> Option<(f32, f32)> {
        finite_min_max(self.data.iter().copied())
    }

    /// Copies the voxels inside `bbox` into a new volume with the same spacing.
    pub fn crop(&self, bbox: &BoundingBox) -> Self {
        let d = bbox.dims();
        let mut data = Vec::with_capacity(d.iter().product());
        for z in bbox.lo[0]..=bbox.hi[0] {
            for y in bbox.lo[1]..=bbox.hi[1] {
                let start = self.index(z, y, bbox.lo[2]);
                data.extend_from_slice(&self.data[start..start + d[2]]);
            }
        }
        Self {
            dims: d,
            spacing: self.spacing,
            data,
        }
    }

    /// Voxel-wise product with a mask (zero outside).
    pub fn masked(&self, mask: &BinaryMask) -> Result<Self> {
        self.same_grid(mask.dims())?;
        Ok(Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self
                .data
                .iter()
                .zip(mask.data())
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect(),
        })
    }
}

pub(crate) fn finite_min_max<I: Iterator<Item = f32>>(it: I) -> Option<(f32, f32)> {
    let mut out: Option<(f32, f32)> = None;
    for v in it.filter(|v| v.is_finite()) {
        out = Some(match out {
            None => (v, v),
            Some((lo, hi)) => (lo.min(v), hi.max(v)),
        });
    }
    out
}

/// Binary mask sharing the grid conventions of [`Volume3D`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: Dims,
    spacing: Spacing,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<bool>) -> Result<Self> {
        check_grid(dims, spacing, data.len())?;
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![false; dims.iter().product()])
    }

    pub fn full(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![true; dims.iter().product()])
    }

    pub fn from_fn<F>(dims: Dims, spacing: Spacing, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> bool,
    {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn from_volume<F: Fn(f32) -> bool>(vol: &Volume3D, pred: F) -> Self {
        Self {
            dims: vol.dims,
            spacing: vol.spacing,
            data: vol.data.iter().map(|&v| pred(v)).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        linear_index(self.dims, z, y, x)
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: bool) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Result<Self> {
        check_grid(self.dims, spacing, self.data.len())?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Voxels set in `self` but not in `other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with<F: Fn(bool, bool) -> bool>(&self, other: &Self, f: F) -> Result<Self> {
        if self.dims != other.dims {
            return Err(VolumeError::GridMismatch(self.dims, other.dims));
        }
        Ok(Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Coordinates `(z, y, x)` of set voxels in storage order.
    pub fn coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let dims = self.dims;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| unravel(dims, i))
    }

    pub fn to_volume(&self) -> Volume3D {
        Volume3D {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Self {
        let d = bbox.dims();
        let mut data = Vec::with_capacity(d.iter().product());
        for z in bbox.lo[0]..=bbox.hi[0] {
            for y in bbox.lo[1]..=bbox.hi[1] {
                let start = self.index(z, y, bbox.lo[2]);
                data.extend_from_slice(&self.data[start..start + d[2]]);
            }
        }
        Self {
            dims: d,
            spacing: self.spacing,
            data,
        }
    }

    /// Tight bounding box of the set voxels, or `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for p in self.coords() {
            any = true;
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        any.then_some(BoundingBox { lo, hi })
    }
}

/// Axis-aligned box with inclusive `(lo, hi)` voxel indices per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn dims(&self) -> Dims {
        [
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        ]
    }

    /// Grows the box by `pad` voxels per side, clamped to `0..dims`.
    pub fn padded(&self, pad: usize, dims: Dims) -> Self {
        let mut out = *self;
        for a in 0..3 {
            out.lo[a] = self.lo[a].saturating_sub(pad);
            out.hi[a] = (self.hi[a] + pad).min(dims[a] - 1);
        }
        out
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] <= self.hi[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(
            Volume3D::new([2, 2, 2], [1.0; 3], vec![0.0; 7]),
            Err(VolumeError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Volume3D::new([0, 2, 2], [1.0; 3], vec![]),
            Err(VolumeError::ZeroDim(_))
        ));
        assert!(matches!(
            Volume3D::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0]),
            Err(VolumeError::InvalidSpacing(_))
        ));
    }

    #[test]
    fn x_is_fastest_axis() {
        let v = Volume3D::from_fn([2, 3, 4], [1.0; 3], |z, y, x| (100 * z + 10 * y + x) as f32)
            .unwrap();
        assert_eq!(v.data()[1], 1.0);
        assert_eq!(v.data()[4], 10.0);
        assert_eq!(v.data()[12], 100.0);
        assert_eq!(unravel(v.dims(), 12 + 4 + 1), [1, 1, 1]);
    }

    #[test]
    fn crop_and_bbox() {
        let m = BinaryMask::from_fn([5, 5, 5], [1.0; 3], |z, y, x| (z, y, x) == (2, 1, 3)).unwrap();
        let b = m.bounding_box().unwrap();
        assert_eq!(b, BoundingBox { lo: [2, 1, 3], hi: [2, 1, 3] });
        let p = b.padded(2, m.dims());
        assert_eq!(p, BoundingBox { lo: [0, 0, 1], hi: [4, 3, 4] });
        assert_eq!(m.crop(&p).count(), 1);
        assert!(BinaryMask::empty([2, 2, 2], [1.0; 3]).unwrap().bounding_box().is_none());
    }

    #[test]
    fn offsets26_has_26_unique() {
        let v: Vec<_> = offsets26().collect();
        assert_eq!(v.len(), 26);
        let mut s = v.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 26);
    }
}
