//! Seeded slice augmentation.
//!
//! Transforms run in a fixed order (flip, rotation, zoom, Gaussian noise,
//! intensity shift, coarse dropout), each behind its own probability gate,
//! and the result is clamped to `[0, 1]`. The random stream for a slice is a
//! ChaCha8 generator keyed by SHA-256 of `(seed, patient_id, slice_index,
//! epoch)`, so any worker reproduces the same output for the same key.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Slice;
use crate::manifest::{DatasetManifest, Record, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub rotate_p: f64,
    pub rotate_max_rad: f64,
    pub zoom_p: f64,
    pub zoom_range: [f64; 2],
    pub noise_p: f64,
    pub noise_mu: f64,
    pub noise_sigma: f64,
    pub shift_p: f64,
    pub shift_offset: f64,
    pub dropout_p: f64,
    pub dropout_patches: [usize; 2],
    pub dropout_size: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_p: 0.5,
            rotate_p: 0.2,
            rotate_max_rad: PI / 12.0,
            zoom_p: 0.2,
            zoom_range: [0.95, 1.05],
            noise_p: 0.2,
            noise_mu: 0.0,
            noise_sigma: 0.05,
            shift_p: 0.8,
            shift_offset: 0.2,
            dropout_p: 0.2,
            dropout_patches: [5, 10],
            dropout_size: 16,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every gate closed.
    pub fn disabled(seed: u64) -> Self {
        Self { flip_p: 0.0, rotate_p: 0.0, zoom_p: 0.0, noise_p: 0.0, shift_p: 0.0, dropout_p: 0.0, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("flip_p", self.flip_p),
            ("rotate_p", self.rotate_p),
            ("zoom_p", self.zoom_p),
            ("noise_p", self.noise_p),
            ("shift_p", self.shift_p),
            ("dropout_p", self.dropout_p),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.zoom_range[0] > 0.0 && self.zoom_range[0] <= self.zoom_range[1]) {
            return Err(Error::Invalid(format!("zoom_range {:?} must be positive and ordered", self.zoom_range)));
        }
        if !(self.dropout_patches[0] >= 1 && self.dropout_patches[0] <= self.dropout_patches[1]) {
            return Err(Error::Invalid(format!("dropout_patches {:?} must be positive and ordered", self.dropout_patches)));
        }
        if self.dropout_size == 0 {
            return Err(Error::Invalid("dropout_size must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.rotate_max_rad >= 0.0 && self.shift_offset >= 0.0) {
            return Err(Error::Invalid("noise_sigma, rotate_max_rad and shift_offset must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub patient_id: String,
    pub slice_index: u32,
    pub epoch: u32,
}

impl StreamKey {
    pub fn new(patient_id: impl Into<String>, slice_index: u32, epoch: u32) -> Self {
        Self { patient_id: patient_id.into(), slice_index, epoch }
    }
}

pub fn stream_rng(seed: u64, key: &StreamKey) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((key.patient_id.len() as u64).to_le_bytes());
    h.update(key.patient_id.as_bytes());
    h.update(key.slice_index.to_le_bytes());
    h.update(key.epoch.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxes {
    /// Reverses columns.
    Horizontal,
    /// Reverses rows.
    Vertical,
    Both,
}

/// What fired while augmenting one slice, with the drawn parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentTrace {
    pub flip: Option<FlipAxes>,
    pub rotation: Option<f64>,
    pub zoom: Option<f64>,
    pub noise: bool,
    pub shift: Option<f64>,
    pub dropout: Option<Vec<(usize, usize)>>,
}

pub fn flip(slice: &Slice, axes: FlipAxes) -> Slice {
    let (w, h) = (slice.width(), slice.height());
    let (fx, fy) = match axes {
        FlipAxes::Horizontal => (true, false),
        FlipAxes::Vertical => (false, true),
        FlipAxes::Both => (true, true),
    };
    Slice::from_fn(w, h, |x, y| *slice.get(if fx { w - 1 - x } else { x }, if fy { h - 1 - y } else { y }))
}

/// Bilinear sample treating everything outside the grid as 0.
fn sample_zero_fill(slice: &Slice, sx: f64, sy: f64) -> f64 {
    let (x0, y0) = (sx.floor(), sy.floor());
    let (tx, ty) = (sx - x0, sy - y0);
    let at = |x: f64, y: f64| -> f64 {
        if x < 0.0 || y < 0.0 || x >= slice.width() as f64 || y >= slice.height() as f64 {
            0.0
        } else {
            *slice.get(x as usize, y as usize)
        }
    };
    let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Inverse-maps each output pixel through `src = centre + m · (p - centre)`.
fn warp(slice: &Slice, m: [[f64; 2]; 2]) -> Slice {
    let cx = (slice.width() as f64 - 1.0) / 2.0;
    let cy = (slice.height() as f64 - 1.0) / 2.0;
    Slice::from_fn(slice.width(), slice.height(), |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        sample_zero_fill(slice, cx + m[0][0] * dx + m[0][1] * dy, cy + m[1][0] * dx + m[1][1] * dy)
    })
}

/// Rotation by `theta` radians about the centre, bilinear with zero fill.
pub fn rotate(slice: &Slice, theta: f64) -> Slice {
    let (s, c) = theta.sin_cos();
    warp(slice, [[c, s], [-s, c]])
}

/// Centre-anchored scaling by `scale`, bilinear with zero fill.
pub fn zoom(slice: &Slice, scale: f64) -> Slice {
    let inv = 1.0 / scale;
    warp(slice, [[inv, 0.0], [0.0, inv]])
}

/// Zeroes `size × size` patches with top-left corners `patches` (clipped to the image).
pub fn coarse_dropout(slice: &Slice, patches: &[(usize, usize)], size: usize) -> Slice {
    let mut out = slice.clone();
    for &(px, py) in patches {
        for y in py..(py + size).min(slice.height()) {
            for x in px..(px + size).min(slice.width()) {
                out.set(x, y, 0.0);
            }
        }
    }
    out
}

pub fn augment_slice(slice: &Slice, cfg: &AugmentConfig, key: &StreamKey) -> Result<Slice> {
    augment_slice_traced(slice, cfg, key).map(|(s, _)| s)
}

pub fn augment_slice_traced(slice: &Slice, cfg: &AugmentConfig, key: &StreamKey) -> Result<(Slice, AugmentTrace)> {
    cfg.validate()?;
    if slice.width() != slice.height() || slice.is_empty() {
        return Err(Error::Invalid(format!("slice must be square, got {}x{}", slice.width(), slice.height())));
    }
    if slice.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Invalid("slice values must lie in [0, 1]".into()));
    }
    let mut rng = stream_rng(cfg.seed, key);
    let mut trace = AugmentTrace::default();
    let mut out = slice.clone();

    if rng.gen::<f64>() < cfg.flip_p {
        let axes = [FlipAxes::Horizontal, FlipAxes::Vertical, FlipAxes::Both][rng.gen_range(0..3)];
        out = flip(&out, axes);
        trace.flip = Some(axes);
    }
    if rng.gen::<f64>() < cfg.rotate_p {
        let theta = rng.gen::<f64>() * cfg.rotate_max_rad;
        out = rotate(&out, theta);
        trace.rotation = Some(theta);
    }
    if rng.gen::<f64>() < cfg.zoom_p {
        let [lo, hi] = cfg.zoom_range;
        let scale = lo + rng.gen::<f64>() * (hi - lo);
        out = zoom(&out, scale);
        trace.zoom = Some(scale);
    }
    if rng.gen::<f64>() < cfg.noise_p {
        let normal = Normal::new(cfg.noise_mu, cfg.noise_sigma).expect("sigma validated");
        for v in out.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
        trace.noise = true;
    }
    if rng.gen::<f64>() < cfg.shift_p {
        let offset = (2.0 * rng.gen::<f64>() - 1.0) * cfg.shift_offset;
        for v in out.as_mut_slice() {
            *v += offset;
        }
        trace.shift = Some(offset);
    }
    if rng.gen::<f64>() < cfg.dropout_p {
        let [lo, hi] = cfg.dropout_patches;
        let count = rng.gen_range(lo..=hi);
        let max_x = out.width().saturating_sub(cfg.dropout_size);
        let max_y = out.height().saturating_sub(cfg.dropout_size);
        let patches: Vec<(usize, usize)> =
            (0..count).map(|_| (rng.gen_range(0..=max_x), rng.gen_range(0..=max_y))).collect();
        out = coarse_dropout(&out, &patches, cfg.dropout_size);
        trace.dropout = Some(patches);
    }
    for v in out.as_mut_slice() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((out, trace))
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes `copies` augmented variants of every train/val slice into `out_dir`
/// and returns the manifest of originals plus variants.
pub fn augment_dataset(manifest: &DatasetManifest, cfg: &AugmentConfig, copies: u32, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    if copies < 1 {
        return Err(Error::Invalid("copies must be >= 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let jobs: Vec<(&Record, u32)> = manifest
        .records
        .iter()
        .filter(|r| r.variant == 0 && matches!(r.split, Split::Train | Split::Val))
        .flat_map(|r| (1..=copies).map(move |k| (r, k)))
        .collect();

    let produced: Vec<Result<Record>> = jobs
        .par_iter()
        .map(|&(r, k)| {
            let slice = crate::io::read_png_unit(&r.image_path)?;
            let key = StreamKey::new(r.patient_id.clone(), r.slice_index, k);
            let out = augment_slice(&slice, cfg, &key).map_err(|e| Error::format(&r.image_path, e.to_string()))?;
            let path = out_dir.join(format!("{}_{:04}_aug{k}.png", file_safe(&r.patient_id), r.slice_index));
            crate::io::write_png_unit(&out, &path)?;
            Ok(Record { image_path: path, variant: k, ..r.clone() })
        })
        .collect();

    let mut records = manifest.records.clone();
    for r in produced {
        records.push(r?);
    }
    DatasetManifest::new(records)
}
