//! Leg ROI extraction: table removal, leg segmentation, and per-leg crops.
//!
//! Each axial slice is opened with a disk, thresholded with Otsu's method,
//! and reduced to its largest components away from the bottom of the image.
//! Legs are then tracked across slices by centroid `x` and cropped into
//! square, slice-normalized ROIs resampled to `roi_size × roi_size`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2, Mask2, Slice};
use crate::labeling::label_8;
use crate::morphology::morphological_open_disk;
use crate::volume::{BinaryMask, Volume};

/// Components whose centroid row lies at or below this fraction of the
/// height are treated as table, not anatomy.
pub const TABLE_GUARD_FRACTION: f64 = 0.8;
/// Padding added to the largest leg extent before cropping.
pub const CROP_PADDING: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocConfig {
    pub opening_radius_px: usize,
    pub roi_size: usize,
    pub component_count: usize,
    pub otsu_bins: usize,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self { opening_radius_px: 10, roi_size: 256, component_count: 2, otsu_bins: 256 }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.opening_radius_px < 1 {
            return Err(Error::Invalid("opening_radius_px must be >= 1".into()));
        }
        if self.roi_size < 8 {
            return Err(Error::Invalid("roi_size must be >= 8".into()));
        }
        if !(1..=2).contains(&self.component_count) {
            return Err(Error::Invalid("component_count must be 1 or 2".into()));
        }
        if self.otsu_bins < 2 {
            return Err(Error::Invalid("otsu_bins must be >= 2".into()));
        }
        Ok(())
    }
}

/// Otsu's threshold over a `bins`-bin histogram spanning the slice range.
///
/// Class means use the exact sums of the values in each bin. The returned
/// threshold is the midpoint between the largest value of the lower class
/// and the smallest value of the upper class, so `value > threshold`
/// reproduces the histogram split exactly.
pub fn otsu_threshold(slice: &Slice, bins: usize) -> Result<(f64, Mask2)> {
    if bins < 2 {
        return Err(Error::Invalid("otsu needs at least 2 bins".into()));
    }
    let (lo, hi) = slice.min_max();
    if !(hi > lo) {
        return Err(Error::DegenerateHistogram);
    }
    let width = (hi - lo) / bins as f64;
    let mut count = vec![0u64; bins];
    let mut sum = vec![0f64; bins];
    let mut bin_min = vec![f64::INFINITY; bins];
    let mut bin_max = vec![f64::NEG_INFINITY; bins];
    for &v in slice.as_slice() {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        count[b] += 1;
        sum[b] += v;
        bin_min[b] = bin_min[b].min(v);
        bin_max[b] = bin_max[b].max(v);
    }
    let total_n: u64 = count.iter().sum();
    let total_s: f64 = sum.iter().sum();

    let (mut n0, mut s0) = (0u64, 0f64);
    let mut best: Option<(f64, usize)> = None;
    for t in 0..bins - 1 {
        n0 += count[t];
        s0 += sum[t];
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_s - s0;
        let diff = s0 / n0 as f64 - s1 / n1 as f64;
        let between = n0 as f64 * n1 as f64 * diff * diff;
        if best.map_or(true, |(b, _)| between > b) {
            best = Some((between, t));
        }
    }
    let (_, cut) = best.ok_or(Error::DegenerateHistogram)?;
    let below = bin_max[..=cut].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let above = bin_min[cut + 1..].iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = 0.5 * (below + above);
    Ok((threshold, slice.map(|&v| v > threshold)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub label: u32,
    pub area: usize,
    pub centroid: [f64; 2],
    /// Inclusive `[x0, y0, x1, y1]`.
    pub bbox: [usize; 4],
}

fn component_stats(mask: &Mask2) -> (Vec<u32>, Vec<ComponentStats>) {
    let labels = label_8(mask);
    let mut stats: Vec<ComponentStats> = (1..=labels.count as u32)
        .map(|label| ComponentStats { label, area: 0, centroid: [0.0; 2], bbox: [usize::MAX, usize::MAX, 0, 0] })
        .collect();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let l = labels.labels[mask.index(x, y)];
            if l == 0 {
                continue;
            }
            let s = &mut stats[l as usize - 1];
            s.area += 1;
            s.centroid[0] += x as f64;
            s.centroid[1] += y as f64;
            s.bbox = [s.bbox[0].min(x), s.bbox[1].min(y), s.bbox[2].max(x), s.bbox[3].max(y)];
        }
    }
    for s in &mut stats {
        s.centroid = s.centroid.map(|c| c / s.area as f64);
    }
    (labels.labels, stats)
}

/// The `k` largest 8-connected components not centred in the bottom rows,
/// with their statistics (largest first).
pub fn top_components(mask: &Mask2, k: usize) -> (Mask2, Vec<ComponentStats>) {
    let (labels, stats) = component_stats(mask);
    let mut keep = vec![false; stats.len() + 1];
    let guard = TABLE_GUARD_FRACTION * mask.height() as f64;
    let mut kept: Vec<ComponentStats> = stats.into_iter().filter(|s| s.centroid[1] < guard).collect();
    kept.sort_by(|a, b| b.area.cmp(&a.area).then(a.label.cmp(&b.label)));
    kept.truncate(k);
    for s in &kept {
        keep[s.label as usize] = true;
    }
    let out = Grid2::from_vec(mask.width(), mask.height(), labels.iter().map(|&l| keep[l as usize]).collect());
    (out, kept)
}

/// Keeps the `k` largest components whose centroids are in the upper 80% of the image.
pub fn largest_top_components(mask: &Mask2, k: usize) -> Mask2 {
    assert!(k >= 1, "k must be >= 1");
    top_components(mask, k).0
}

/// Maps `[0, 1]` by the slice's own range; a constant slice becomes zeros.
pub fn normalize_min_max(slice: &Slice) -> Slice {
    let (lo, hi) = slice.min_max();
    if !(hi > lo) {
        return slice.map(|_| 0.0);
    }
    let span = hi - lo;
    slice.map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
}

/// Nearest-neighbour resampling; output pixel `u` samples `floor((u + 0.5) * in / out)`.
pub fn resize_nearest<T: Clone>(grid: &Grid2<T>, width: usize, height: usize) -> Grid2<T> {
    let (iw, ih) = (grid.width(), grid.height());
    let xs: Vec<usize> = (0..width).map(|u| (((2 * u + 1) * iw) / (2 * width)).min(iw - 1)).collect();
    let ys: Vec<usize> = (0..height).map(|v| (((2 * v + 1) * ih) / (2 * height)).min(ih - 1)).collect();
    Grid2::from_fn(width, height, |u, v| grid.get(xs[u], ys[v]).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Single,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Single => "single",
        }
    }
}

/// Square source window `[x0, x0 + side) × [y0, y0 + side)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

impl CropWindow {
    pub fn crop<T: Clone>(&self, grid: &Grid2<T>) -> Grid2<T> {
        Grid2::from_fn(self.side, self.side, |x, y| grid.get(self.x0 + x, self.y0 + y).clone())
    }

    /// Applies the same crop and resampling as the ROI to a full-frame mask.
    pub fn map_mask(&self, mask: &BinaryMask, roi_size: usize) -> BinaryMask {
        let slices: Vec<Mask2> =
            mask.slices().iter().map(|s| resize_nearest(&self.crop(s), roi_size, roi_size)).collect();
        BinaryMask::from_slices(&slices).expect("uniform slices")
    }
}

#[derive(Debug, Clone)]
pub struct Roi {
    pub side: Side,
    pub window: CropWindow,
    pub volume: Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiReport {
    pub side: Side,
    pub window: CropWindow,
    /// Mean `(x, y)` of the leg's voxels over all slices, in source pixels.
    pub centroid: [f64; 2],
    pub voxels: usize,
}

#[derive(Debug, Clone)]
pub struct LegSplit {
    pub rois: Vec<Roi>,
    pub reports: Vec<RoiReport>,
    pub warnings: Vec<String>,
}

#[derive(Default, Clone)]
struct LegAccumulator {
    sum: [f64; 2],
    voxels: usize,
    max_extent: usize,
}

/// Crops one ROI per leg from `volume` given per-slice leg masks.
pub fn split_leg_rois(volume: &Volume, leg_masks: &[Mask2], cfg: &PreprocConfig) -> Result<LegSplit> {
    cfg.validate()?;
    let [nx, ny, nz] = volume.dims();
    if leg_masks.len() != nz || leg_masks.iter().any(|m| m.width() != nx || m.height() != ny) {
        return Err(Error::Invalid("leg masks are not aligned with the volume".into()));
    }
    let mut warnings = Vec::new();
    let per_slice: Vec<(Vec<u32>, Vec<ComponentStats>)> = leg_masks.iter().map(component_stats).collect();

    // Reference x per leg from slices showing the full leg count.
    let expected = cfg.component_count;
    let mut ref_sum = vec![0.0; expected];
    let mut ref_n = 0usize;
    for (_, stats) in &per_slice {
        if stats.len() == expected {
            let mut xs: Vec<(f64, u32)> = stats.iter().map(|s| (s.centroid[0], s.label)).collect();
            xs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (acc, (x, _)) in ref_sum.iter_mut().zip(&xs) {
                *acc += x;
            }
            ref_n += 1;
        }
    }
    let references: Vec<f64> = if ref_n > 0 {
        ref_sum.iter().map(|s| s / ref_n as f64).collect()
    } else {
        let all: Vec<f64> = per_slice.iter().flat_map(|(_, s)| s.iter().map(|c| c.centroid[0])).collect();
        if all.is_empty() {
            return Err(Error::Invalid("no leg components found in any slice".into()));
        }
        warnings.push(format!("expected {expected} legs but no slice shows that many; emitting a single ROI"));
        vec![all.iter().sum::<f64>() / all.len() as f64]
    };
    let sides: Vec<Side> = match references.len() {
        1 => vec![Side::Single],
        _ => vec![Side::Left, Side::Right],
    };

    let mut legs = vec![LegAccumulator::default(); references.len()];
    for (_, stats) in &per_slice {
        let mut slice_bbox: Vec<Option<[usize; 4]>> = vec![None; references.len()];
        for s in stats {
            let leg = nearest(&references, s.centroid[0]);
            let acc = &mut legs[leg];
            acc.sum[0] += s.centroid[0] * s.area as f64;
            acc.sum[1] += s.centroid[1] * s.area as f64;
            acc.voxels += s.area;
            let b = slice_bbox[leg].get_or_insert(s.bbox);
            *b = [b[0].min(s.bbox[0]), b[1].min(s.bbox[1]), b[2].max(s.bbox[2]), b[3].max(s.bbox[3])];
        }
        for (acc, b) in legs.iter_mut().zip(&slice_bbox) {
            if let Some(b) = b {
                acc.max_extent = acc.max_extent.max(b[2] - b[0] + 1).max(b[3] - b[1] + 1);
            }
        }
    }

    let mut rois = Vec::new();
    let mut reports = Vec::new();
    for (leg, acc) in legs.iter().enumerate() {
        if acc.voxels == 0 {
            warnings.push(format!("{} leg has no voxels; skipped", sides[leg].as_str()));
            continue;
        }
        let centroid = acc.sum.map(|s| s / acc.voxels as f64);
        let side = ((acc.max_extent as f64 * (1.0 + CROP_PADDING)).ceil() as usize).clamp(1, nx.min(ny));
        let place = |c: f64, n: usize| -> usize {
            let start = (c - (side as f64 - 1.0) / 2.0).round();
            start.clamp(0.0, (n - side) as f64) as usize
        };
        let window = CropWindow { x0: place(centroid[0], nx), y0: place(centroid[1], ny), side };
        let slices: Vec<Slice> = (0..nz)
            .into_par_iter()
            .map(|z| {
                let crop = window.crop(&volume.slice(z));
                resize_nearest(&normalize_min_max(&crop), cfg.roi_size, cfg.roi_size)
            })
            .collect();
        let [sx, sy, sz] = volume.spacing();
        let scale = side as f64 / cfg.roi_size as f64;
        let roi_volume = Volume::from_slices(&slices, [sx * scale, sy * scale, sz])?;
        rois.push(Roi { side: sides[leg], window, volume: roi_volume });
        reports.push(RoiReport { side: sides[leg], window, centroid, voxels: acc.voxels });
    }
    if rois.len() < expected {
        warnings.push(format!("expected {expected} ROIs, produced {}", rois.len()));
    }
    Ok(LegSplit { rois, reports, warnings })
}

fn nearest(references: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, r) in references.iter().enumerate() {
        if (r - x).abs() < (references[best] - x).abs() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub slice: usize,
    pub threshold: f64,
    pub component_areas: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocReport {
    pub config: PreprocConfig,
    pub slices: Vec<SliceReport>,
    pub rois: Vec<RoiReport>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

/// Opening, Otsu and component selection for every slice, in slice order.
pub fn segment_legs(volume: &Volume, cfg: &PreprocConfig) -> Result<(Vec<Mask2>, Vec<SliceReport>)> {
    cfg.validate()?;
    let results: Vec<Result<(Mask2, SliceReport)>> = (0..volume.slice_count())
        .into_par_iter()
        .map(|z| {
            let opened = morphological_open_disk(&volume.slice(z), cfg.opening_radius_px);
            let (threshold, mask) = otsu_threshold(&opened, cfg.otsu_bins).map_err(|e| Error::at_slice(z, e))?;
            let (legs, stats) = top_components(&mask, cfg.component_count);
            let component_areas = stats.iter().map(|s| s.area).collect();
            Ok((legs, SliceReport { slice: z, threshold, component_areas }))
        })
        .collect();
    let mut masks = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        let (m, rep) = r?;
        masks.push(m);
        reports.push(rep);
    }
    Ok((masks, reports))
}

#[derive(Debug, Clone)]
pub struct PreprocOutput {
    pub rois: Vec<Roi>,
    pub report: PreprocReport,
}

pub fn preprocess_study(volume: &Volume, cfg: &PreprocConfig) -> Result<PreprocOutput> {
    let (masks, slices) = segment_legs(volume, cfg)?;
    let split = split_leg_rois(volume, &masks, cfg)?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    Ok(PreprocOutput {
        rois: split.rois,
        report: PreprocReport {
            config: cfg.clone(),
            slices,
            rois: split.reports,
            warnings: split.warnings,
            notes: vec!["each ROI is a square crop centred on its leg's 3D centroid, not a midline split".into()],
        },
    })
}
