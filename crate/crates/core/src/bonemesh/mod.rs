//! Bone extraction and surface meshing for a leg ROI.
//!
//! Per slice: Gaussian smoothing, 1D k-means on intensities, keep the
//! brightest cluster, close and fill. Then across slices: ball closing,
//! removal of small 26-connected components, marching cubes and Taubin
//! smoothing.

pub mod kmeans;
pub mod marching;
pub mod taubin;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Mask2, Slice};
use crate::labeling::label_26;
use crate::mesh::TriMesh;
use crate::morphology::{close_ball, close_disk, fill_holes};
use crate::signal::{convolve_strided, gaussian_kernel};
use crate::volume::{BinaryMask, Volume};

pub use kmeans::{kmeans_1d, KMeans};
pub use marching::extract_isosurface;
pub use taubin::taubin_smooth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaubinConfig {
    pub lambda: f64,
    pub mu: f64,
    pub iterations: usize,
}

impl Default for TaubinConfig {
    fn default() -> Self {
        Self { lambda: 0.5, mu: -0.53, iterations: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoneMeshConfig {
    pub gaussian_sigma: f64,
    pub kmeans_k: usize,
    pub closing_radius_2d: usize,
    pub volumetric_radius: usize,
    pub min_component_voxels: usize,
    pub taubin: TaubinConfig,
}

impl Default for BoneMeshConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 2.0,
            kmeans_k: 5,
            closing_radius_2d: 3,
            volumetric_radius: 3,
            min_component_voxels: 100,
            taubin: TaubinConfig::default(),
        }
    }
}

impl BoneMeshConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::Invalid("gaussian_sigma must be positive".into()));
        }
        if self.kmeans_k < 2 {
            return Err(Error::Invalid("kmeans_k must be >= 2".into()));
        }
        if self.closing_radius_2d < 1 || self.volumetric_radius < 1 {
            return Err(Error::Invalid("closing radii must be >= 1".into()));
        }
        let t = &self.taubin;
        if !(t.lambda > 0.0 && t.mu < 0.0 && t.mu.abs() > t.lambda) {
            return Err(Error::Invalid(format!("taubin needs lambda > 0 > mu with |mu| > lambda, got {} / {}", t.lambda, t.mu)));
        }
        Ok(())
    }
}

/// Separable Gaussian blur with half-width `ceil(3 sigma)` and reflected borders.
pub fn gaussian_filter(slice: &Slice, sigma: f64) -> Slice {
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (slice.width(), slice.height());
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        convolve_strided(slice.as_slice(), y * w, 1, w, &kernel, &mut rows);
    }
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        convolve_strided(&rows, x, w, h, &kernel, &mut out);
    }
    Slice::from_vec(w, h, out)
}

/// Pixels in the highest-centred k-means cluster. A constant slice has no
/// brightest cluster and yields an empty mask.
pub fn brightest_cluster_mask(slice: &Slice, k: usize) -> Result<Mask2> {
    let (lo, hi) = slice.min_max();
    if !(hi > lo) {
        log::warn!("constant slice; bone mask left empty");
        return Ok(Mask2::filled(slice.width(), slice.height(), false));
    }
    let values = slice.as_slice();
    let r = match kmeans_1d(values, k) {
        Err(Error::TooFewDistinct { .. }) => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            kmeans_1d(values, v.len())?
        }
        other => other?,
    };
    let top = r.centers.len() - 1;
    Ok(Mask2::from_vec(slice.width(), slice.height(), r.labels.iter().map(|&l| l == top).collect()))
}

pub fn close_and_fill(mask: &Mask2, radius: usize) -> Mask2 {
    fill_holes(&close_disk(mask, radius))
}

pub fn volumetric_close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    close_ball(mask, radius)
}

/// Drops 26-connected components with fewer than `min_voxels` voxels.
pub fn remove_small_components(mask: &BinaryMask, min_voxels: usize) -> BinaryMask {
    if min_voxels == 0 {
        return mask.clone();
    }
    let labels = label_26(mask);
    let sizes = labels.sizes();
    let bits = labels.labels.iter().map(|&l| l > 0 && sizes[l as usize - 1] >= min_voxels).collect();
    BinaryMask::from_bits(mask.dims(), bits).expect("same dims")
}

/// Per-slice bone mask before any 3D processing.
pub fn slice_bone_mask(slice: &Slice, cfg: &BoneMeshConfig) -> Result<Mask2> {
    let smooth = gaussian_filter(slice, cfg.gaussian_sigma);
    let bright = brightest_cluster_mask(&smooth, cfg.kmeans_k)?;
    Ok(close_and_fill(&bright, cfg.closing_radius_2d))
}

#[derive(Debug, Clone)]
pub struct BoneModel {
    pub mesh: TriMesh,
    pub mask: BinaryMask,
}

/// Bone mask of a ROI, without meshing.
pub fn bone_mask(roi: &Volume, cfg: &BoneMeshConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let slices = (0..roi.slice_count())
        .into_par_iter()
        .map(|z| slice_bone_mask(&roi.slice(z), cfg).map_err(|e| Error::at_slice(z, e)))
        .collect::<Result<Vec<Mask2>>>()?;
    let stacked = BinaryMask::from_slices(&slices)?;
    let closed = volumetric_close(&stacked, cfg.volumetric_radius);
    let mask = remove_small_components(&closed, cfg.min_component_voxels);
    if mask.is_empty() {
        return Err(Error::NoBone);
    }
    Ok(mask)
}

pub fn build_bone_model(roi: &Volume, cfg: &BoneMeshConfig) -> Result<BoneModel> {
    let mask = bone_mask(roi, cfg)?;
    let raw = extract_isosurface(&mask, roi.spacing())?;
    let t = &cfg.taubin;
    let mesh = taubin_smooth(&raw, t.lambda, t.mu, t.iterations);
    Ok(BoneModel { mesh, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{dilate_disk, erode_disk};

    #[test]
    fn gaussian_constant_and_impulse() {
        let c = gaussian_filter(&Slice::filled(20, 15, 0.37), 2.0);
        assert!(c.as_slice().iter().all(|v| (v - 0.37).abs() < 1e-9));

        let mut img = Slice::filled(31, 31, 0.0);
        img.set(15, 15, 1.0);
        let out = gaussian_filter(&img, 2.0);
        // Direct 2D convolution oracle: the product kernel's centre weight.
        let total: f64 = (-6i32..=6).map(|i| (-(i * i) as f64 / 8.0).exp()).sum();
        assert!((*out.get(15, 15) - 1.0 / (total * total)).abs() < 1e-12);
        assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bimodal_slice() {
        let s = Slice::from_fn(16, 16, |x, y| if (4..10).contains(&x) && (3..7).contains(&y) { 0.9 } else { 0.1 });
        let m = brightest_cluster_mask(&s, 5).unwrap();
        assert_eq!(m, s.map(|&v| v == 0.9));
        assert_eq!(brightest_cluster_mask(&Slice::filled(8, 8, 0.4), 5).unwrap().count(), 0);
    }

    #[test]
    fn close_and_fill_examples() {
        let ring = Mask2::from_fn(21, 21, |x, y| {
            let d = (x as f64 - 10.0).hypot(y as f64 - 10.0);
            (5.0..=7.0).contains(&d)
        });
        let filled = close_and_fill(&ring, 1);
        let disk = Mask2::from_fn(21, 21, |x, y| (x as f64 - 10.0).hypot(y as f64 - 10.0) <= 7.0);
        assert!(disk.is_subset_of(&filled));

        let blobs = Mask2::from_fn(20, 10, |x, y| (2..7).contains(&y) && ((4..9).contains(&x) || (10..15).contains(&x)));
        let merged = close_and_fill(&blobs, 2);
        assert_eq!(merged, fill_holes(&erode_disk(&dilate_disk(&blobs, 2), 2)));
        assert!(*merged.get(9, 4));
        assert_eq!(close_and_fill(&Mask2::filled(9, 9, false), 3).count(), 0);
    }

    #[test]
    fn small_components() {
        let mut m = BinaryMask::empty([20, 20, 20]);
        for z in 2..7 {
            for y in 2..12 {
                for x in 2..12 {
                    m.set(x, y, z, true);
                }
            }
        }
        for x in 15..20 {
            m.set(x, 17, 17, true);
        }
        let kept = remove_small_components(&m, 100);
        assert_eq!(kept.count(), 500);
        assert_eq!(remove_small_components(&m, 0), m);
        assert_eq!(remove_small_components(&m, 5).count(), 505);
        assert_eq!(remove_small_components(&m, 6).count(), 500);
    }

    #[test]
    fn dark_roi_has_no_bone() {
        let roi = Volume::filled([16, 16, 4], [1.0; 3], 0.0).unwrap();
        assert!(matches!(build_bone_model(&roi, &BoneMeshConfig::default()), Err(Error::NoBone)));
    }

    #[test]
    fn config_validation() {
        assert!(BoneMeshConfig::default().validate().is_ok());
        let bad = BoneMeshConfig { taubin: TaubinConfig { lambda: 0.5, mu: -0.4, iterations: 1 }, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(BoneMeshConfig { kmeans_k: 1, ..Default::default() }.validate().is_err());
    }
}
