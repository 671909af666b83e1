//! Tumor localization from per-slice confidences.
//!
//! The raw series is smoothed, median filtered, thresholded, stripped of
//! short runs, and the surviving span is turned into a box over the bone
//! voxels of those slices.

use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceSeries;
use crate::error::{Error, Result};
use crate::mesh::{Aabb, TriMesh};
use crate::signal::{convolve_reflect, gaussian_kernel, reflect_index};
use crate::volume::{BinaryMask, Spacing};

/// Fraction by which the box grows in x and y, split evenly between sides.
pub const BOX_INFLATION_XY: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    #[default]
    GaussianThenMedian,
    MedianThenGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TumorLocConfig {
    pub threshold: f64,
    pub gaussian_sigma: f64,
    pub median_kernel: usize,
    pub min_run_length: usize,
    pub filter_order: FilterOrder,
}

impl Default for TumorLocConfig {
    fn default() -> Self {
        Self { threshold: 0.95, gaussian_sigma: 2.0, median_kernel: 3, min_run_length: 2, filter_order: FilterOrder::default() }
    }
}

impl TumorLocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Invalid(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::Invalid("gaussian_sigma must be positive".into()));
        }
        if self.median_kernel == 0 || self.median_kernel % 2 == 0 {
            return Err(Error::Invalid(format!("median_kernel {} must be odd and >= 1", self.median_kernel)));
        }
        Ok(())
    }
}

pub fn smooth_confidences(series: &ConfidenceSeries, sigma: f64) -> Result<ConfidenceSeries> {
    if series.is_empty() {
        return Err(Error::Empty);
    }
    if !(sigma > 0.0) {
        return Err(Error::Invalid("sigma must be positive".into()));
    }
    let out = convolve_reflect(series.values(), &gaussian_kernel(sigma));
    Ok(ConfidenceSeries::clamped(series.patient_id.clone(), out))
}

pub fn median_filter_confidences(series: &ConfidenceSeries, kernel: usize) -> Result<ConfidenceSeries> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Invalid(format!("median kernel {kernel} must be odd")));
    }
    let x = series.values();
    let n = x.len();
    let r = (kernel / 2) as isize;
    let mut window = vec![0.0; kernel];
    let out = (0..n as isize)
        .map(|i| {
            for (k, w) in window.iter_mut().enumerate() {
                *w = x[reflect_index(i + k as isize - r, n)];
            }
            window.sort_by(f64::total_cmp);
            window[kernel / 2]
        })
        .collect();
    Ok(ConfidenceSeries::clamped(series.patient_id.clone(), out))
}

/// Maximal runs of `true`, as inclusive `(first, last)` pairs.
pub fn runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len() - 1));
    }
    out
}

/// The filtered series that `tumor_slice_range` thresholds.
pub fn filter_confidences(series: &ConfidenceSeries, cfg: &TumorLocConfig) -> Result<ConfidenceSeries> {
    cfg.validate()?;
    match cfg.filter_order {
        FilterOrder::GaussianThenMedian => {
            median_filter_confidences(&smooth_confidences(series, cfg.gaussian_sigma)?, cfg.median_kernel)
        }
        FilterOrder::MedianThenGaussian => {
            smooth_confidences(&median_filter_confidences(series, cfg.median_kernel)?, cfg.gaussian_sigma)
        }
    }
}

/// Inclusive slice span of the predicted tumor, or `None` if nothing survives.
pub fn tumor_slice_range(series: &ConfidenceSeries, cfg: &TumorLocConfig) -> Result<Option<(usize, usize)>> {
    if series.is_empty() {
        return Ok(None);
    }
    let filtered = filter_confidences(series, cfg)?;
    let flags: Vec<bool> = filtered.values().iter().map(|&v| v > cfg.threshold).collect();
    let kept: Vec<(usize, usize)> = runs(&flags).into_iter().filter(|(a, b)| b - a + 1 >= cfg.min_run_length).collect();
    Ok(match (kept.first(), kept.last()) {
        (Some(first), Some(last)) => Some((first.0, last.1)),
        _ => None,
    })
}

/// Box around the bone voxels of slices `span.0..=span.1`, in millimetres.
///
/// Voxel `i` covers `[(i - 0.5) s, (i + 0.5) s]`, matching mesh vertices at
/// `i * s`. The x and y extents are then widened by [`BOX_INFLATION_XY`].
pub fn tumor_box(bone_mask: &BinaryMask, span: (usize, usize), spacing: Spacing) -> Result<Aabb> {
    let [nx, ny, nz] = bone_mask.dims();
    let (first, last) = span;
    if first > last || last >= nz {
        return Err(Error::Invalid(format!("span {first}..={last} outside 0..{nz}")));
    }
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for z in first..=last {
        for y in 0..ny {
            for x in 0..nx {
                if bone_mask.get(x, y, z) {
                    for (a, v) in [x, y, z].into_iter().enumerate() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v);
                    }
                }
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(Error::EmptyTumorRegion);
    }
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for a in 0..3 {
        min[a] = (lo[a] as f64 - 0.5) * spacing[a];
        max[a] = (hi[a] as f64 + 0.5) * spacing[a];
    }
    for a in 0..2 {
        let grow = (max[a] - min[a]) * BOX_INFLATION_XY / 2.0;
        min[a] -= grow;
        max[a] += grow;
    }
    Aabb::new(min, max)
}

/// Returns a copy of `mesh` with the tumor box appended.
pub fn annotate_tumor_box(mesh: &TriMesh, bone_mask: &BinaryMask, span: (usize, usize), spacing: Spacing) -> Result<TriMesh> {
    let bbox = tumor_box(bone_mask, span, spacing)?;
    let mut out = mesh.clone();
    out.boxes.push(bbox);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: Vec<f64>) -> ConfidenceSeries {
        ConfidenceSeries::new("p", v).unwrap()
    }

    #[test]
    fn smoothing_constant_and_impulse() {
        let s = smooth_confidences(&series(vec![0.8; 30]), 2.0).unwrap();
        assert!(s.values().iter().all(|v| (v - 0.8).abs() < 1e-9));

        let mut x = vec![0.0; 41];
        x[20] = 1.0;
        let s = smooth_confidences(&series(x), 2.0).unwrap();
        // Centre weight of the normalized kernel, summed by hand.
        let total: f64 = (-6i32..=6).map(|i| (-(i * i) as f64 / 8.0).exp()).sum();
        assert!((s.values()[20] - 1.0 / total).abs() < 1e-12);
        assert!(matches!(smooth_confidences(&series(vec![]), 2.0), Err(Error::Empty)));
    }

    #[test]
    fn median_golden_vectors() {
        let m = median_filter_confidences(&series(vec![0.0, 1.0, 0.0]), 3).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0, 0.0]);
        let c = median_filter_confidences(&series(vec![0.3; 7]), 3).unwrap();
        assert_eq!(c.values(), &[0.3; 7]);
        let mono: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(median_filter_confidences(&series(mono.clone()), 3).unwrap().values(), mono.as_slice());
        assert!(median_filter_confidences(&series(vec![0.0; 4]), 2).is_err());
        assert_eq!(median_filter_confidences(&series(vec![0.1, 0.9]), 1).unwrap().values(), &[0.1, 0.9]);
    }

    #[test]
    fn run_extraction() {
        assert_eq!(runs(&[true, true, false, true, false, false, true]), vec![(0, 1), (3, 3), (6, 6)]);
        assert!(runs(&[]).is_empty());
    }

    #[test]
    fn block_span() {
        let mut x = vec![0.0; 64];
        for v in &mut x[20..=35] {
            *v = 1.0;
        }
        let span = tumor_slice_range(&series(x), &TumorLocConfig::default()).unwrap().unwrap();
        assert!(span.0 <= 27 && span.1 >= 28);
        assert!(span.0 >= 17 && span.1 <= 38, "{span:?}");
        assert_eq!(tumor_slice_range(&series(vec![0.0; 20]), &TumorLocConfig::default()).unwrap(), None);
        assert_eq!(tumor_slice_range(&series(vec![1.0; 20]), &TumorLocConfig::default()).unwrap(), Some((0, 19)));
    }

    #[test]
    fn isolated_positive_is_dropped() {
        let cfg = TumorLocConfig { gaussian_sigma: 0.1, median_kernel: 1, min_run_length: 2, ..Default::default() };
        let mut x = vec![0.0; 10];
        x[4] = 1.0;
        assert_eq!(tumor_slice_range(&series(x.clone()), &cfg).unwrap(), None);
        x[5] = 1.0;
        assert_eq!(tumor_slice_range(&series(x), &cfg).unwrap(), Some((4, 5)));
    }

    #[test]
    fn box_covers_span_and_bone() {
        let mut m = BinaryMask::empty([10, 10, 12]);
        for z in 0..12 {
            for y in 3..6 {
                for x in 2..8 {
                    m.set(x, y, z, true);
                }
            }
        }
        let mesh = TriMesh::default();
        let out = annotate_tumor_box(&mesh, &m, (4, 7), [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out.vertices, mesh.vertices);
        assert_eq!(out.faces, mesh.faces);
        let b = out.boxes[0];
        assert_eq!([b.min[2], b.max[2]], [3.5 * 3.0, 7.5 * 3.0]);
        // x: voxels 2..=7 -> [1.5, 7.5], width 6, grown by 0.15 per side
        assert!((b.min[0] - 1.35).abs() < 1e-12 && (b.max[0] - 7.65).abs() < 1e-12);
        assert!((b.min[1] - (2.5 * 2.0 - 0.15)).abs() < 1e-12);
        assert!(matches!(tumor_box(&BinaryMask::empty([4, 4, 4]), (0, 3), [1.0; 3]), Err(Error::EmptyTumorRegion)));
        assert!(tumor_box(&m, (5, 12), [1.0; 3]).is_err());
    }
}
