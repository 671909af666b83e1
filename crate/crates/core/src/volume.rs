//! Scalar volumes and binary masks.
//!
//! Axis convention: `z` indexes axial slices; within a slice `y` grows
//! downward, so the top of the scan is the smallest `y`. Voxels are stored
//! slice by slice, row-major within each slice.

use crate::error::{Error, Result};
use crate::grid::{Mask2, Slice};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

fn check_dims(dims: Dims) -> Result<usize> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Invalid(format!("dims must be >= 1, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Invalid(format!("dims {dims:?} overflow")))
}

/// Spacing is held at `f32` precision so the on-disk form round-trips exactly.
fn check_spacing(spacing: Spacing) -> Result<Spacing> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Invalid(format!("spacing must be finite and > 0, got {spacing:?}")));
    }
    Ok(spacing.map(|s| s as f32 as f64))
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        let n = check_dims(dims)?;
        let spacing = check_spacing(spacing)?;
        if data.len() != n {
            return Err(Error::Invalid(format!(
                "data length {} does not match dims {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite intensity at voxel {i}")));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        let n = check_dims(dims)?;
        Self::new(dims, spacing, vec![value; n])
    }

    /// Stacks equally sized slices along `z`.
    pub fn from_slices(slices: &[Slice], spacing: Spacing) -> Result<Self> {
        let first = slices.first().ok_or(Error::Empty)?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(w * h * slices.len());
        for (z, s) in slices.iter().enumerate() {
            if s.width() != w || s.height() != h {
                return Err(Error::Invalid(format!(
                    "slice {z} is {}x{}, expected {w}x{h}",
                    s.width(),
                    s.height()
                )));
            }
            data.extend(s.as_slice().iter().map(|&v| v as f32));
        }
        Self::new([w, h, slices.len()], spacing, data)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn slice_count(&self) -> usize {
        self.dims[2]
    }

    pub fn slice(&self, z: usize) -> Slice {
        let n = self.dims[0] * self.dims[1];
        let raw = &self.data[z * n..(z + 1) * n];
        Slice::from_vec(self.dims[0], self.dims[1], raw.iter().map(|&v| v as f64).collect())
    }

    pub fn slices(&self) -> Vec<Slice> {
        (0..self.dims[2]).map(|z| self.slice(z)).collect()
    }

    /// Re-checks every invariant; constructors already enforce them.
    pub fn validate(&self) -> Result<()> {
        let n = check_dims(self.dims)?;
        check_spacing(self.spacing)?;
        if self.data.len() != n {
            return Err(Error::Invalid("data length does not match dims".into()));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite intensity".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(dims: Dims) -> Self {
        Self { dims, bits: vec![false; dims.iter().product()] }
    }

    pub fn full(dims: Dims) -> Self {
        Self { dims, bits: vec![true; dims.iter().product()] }
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        let n = check_dims(dims)?;
        if bits.len() != n {
            return Err(Error::Invalid(format!(
                "mask length {} does not match dims {dims:?}",
                bits.len()
            )));
        }
        Ok(Self { dims, bits })
    }

    pub fn from_slices(slices: &[Mask2]) -> Result<Self> {
        let first = slices.first().ok_or(Error::Empty)?;
        let (w, h) = (first.width(), first.height());
        let mut bits = Vec::with_capacity(w * h * slices.len());
        for s in slices {
            if s.width() != w || s.height() != h {
                return Err(Error::Invalid("mask slices differ in size".into()));
            }
            bits.extend_from_slice(s.as_slice());
        }
        Self::from_bits([w, h, slices.len()], bits)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn slice(&self, z: usize) -> Mask2 {
        let n = self.dims[0] * self.dims[1];
        Mask2::from_vec(self.dims[0], self.dims[1], self.bits[z * n..(z + 1) * n].to_vec())
    }

    pub fn slices(&self) -> Vec<Mask2> {
        (0..self.dims[2]).map(|z| self.slice(z)).collect()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    /// Sørensen–Dice overlap; two empty masks score 1.
    pub fn dice(&self, other: &BinaryMask) -> f64 {
        let total = self.count() + other.count();
        if total == 0 {
            return 1.0;
        }
        2.0 * self.intersection_count(other) as f64 / total as f64
    }

    /// Inclusive voxel bounding box `(min, max)` of the set voxels.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if self.get(x, y, z) {
                        any = true;
                        for (a, v) in [x, y, z].into_iter().enumerate() {
                            lo[a] = lo[a].min(v);
                            hi[a] = hi[a].max(v);
                        }
                    }
                }
            }
        }
        any.then_some((lo, hi))
    }

    /// The mask as a 0/1 volume.
    pub fn to_volume(&self, spacing: Spacing) -> Result<Volume> {
        Volume::new(self.dims, spacing, self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    /// Voxels strictly above `level`.
    pub fn from_volume(volume: &Volume, level: f32) -> Self {
        Self { dims: volume.dims(), bits: volume.data().iter().map(|&v| v > level).collect() }
    }
}
