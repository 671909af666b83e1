//! Synthetic two-leg CT phantom with known bone and tumor ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceSeries;
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Dims, Spacing, Volume};

pub const AIR: f32 = 0.0;
pub const SOFT_TISSUE: f32 = 1000.0;
pub const BONE: f32 = 2000.0;
pub const TABLE: f32 = 1500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    #[serde(default = "unit_spacing")]
    pub spacing: Spacing,
    pub leg_radius_vox: usize,
    pub bone_radius_vox: usize,
    pub table_thickness_vox: usize,
    /// Inclusive `[first, last]` slice range carrying tumor; `None` for none.
    #[serde(default)]
    pub tumor_slices: Option<[usize; 2]>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f32,
    pub seed: u64,
}

fn unit_spacing() -> Spacing {
    [1.0; 3]
}

fn default_noise() -> f32 {
    15.0
}

impl PhantomSpec {
    /// A 256×256×64 phantom sized like an adult leg pair at ~1.5 mm pixels.
    pub fn standard(seed: u64) -> Self {
        Self {
            dims: [256, 256, 64],
            spacing: unit_spacing(),
            leg_radius_vox: 40,
            bone_radius_vox: 16,
            table_thickness_vox: 12,
            tumor_slices: Some([20, 35]),
            noise_sigma: default_noise(),
            seed,
        }
    }

    /// Integer `(x, y)` axes of the two leg cylinders, left first.
    pub fn leg_centers(&self) -> [(usize, usize); 2] {
        let [nx, ny, _] = self.dims;
        let y = (ny as f64 * 0.42).round() as usize;
        [((nx as f64 * 0.28).round() as usize, y), ((nx as f64 * 0.72).round() as usize, y)]
    }

    /// First row of the table slab.
    pub fn table_top(&self) -> usize {
        self.dims[1] - self.table_thickness_vox
    }

    fn check(&self) -> Result<()> {
        let [nx, ny, nz] = self.dims;
        let (r, b) = (self.leg_radius_vox, self.bone_radius_vox);
        let fail = |m: String| Err(Error::Invalid(format!("phantom geometry: {m}")));
        if nx == 0 || ny == 0 || nz == 0 {
            return fail(format!("dims {:?}", self.dims));
        }
        if b == 0 || b >= r {
            return fail(format!("bone radius {b} must be in 1..{r}"));
        }
        let [(lx, cy), (rx, _)] = self.leg_centers();
        if lx < r + 1 || rx + r + 1 >= nx || cy < r + 1 {
            return fail(format!("legs of radius {r} do not fit in {nx}x{ny}"));
        }
        if rx - lx <= 2 * r + 2 {
            return fail(format!("legs of radius {r} overlap"));
        }
        if self.table_thickness_vox >= ny || cy + r + 2 >= self.table_top() {
            return fail(format!("table of {} rows collides with the legs", self.table_thickness_vox));
        }
        if let Some([a, z]) = self.tumor_slices {
            if a > z || z >= nz {
                return fail(format!("tumor slices {a}..={z} outside 0..{nz}"));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise sigma must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume,
    pub bone: BinaryMask,
    pub table: BinaryMask,
    pub confidences: ConfidenceSeries,
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.check()?;
    let [nx, ny, nz] = spec.dims;
    let (r2, b2) = ((spec.leg_radius_vox.pow(2)) as i64, (spec.bone_radius_vox.pow(2)) as i64);
    let centers = spec.leg_centers();
    let table_top = spec.table_top();

    let mut plane = vec![AIR; nx * ny];
    let mut bone_plane = vec![false; nx * ny];
    let mut table_plane = vec![false; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            if y >= table_top {
                plane[i] = TABLE;
                table_plane[i] = true;
                continue;
            }
            for &(cx, cy) in &centers {
                let d2 = (x as i64 - cx as i64).pow(2) + (y as i64 - cy as i64).pow(2);
                if d2 <= b2 {
                    plane[i] = BONE;
                    bone_plane[i] = true;
                } else if d2 <= r2 {
                    plane[i] = SOFT_TISSUE;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0f32, spec.noise_sigma).expect("sigma checked");
    let mut data = Vec::with_capacity(nx * ny * nz);
    for _ in 0..nz {
        data.extend(plane.iter().map(|&v| (v + noise.sample(&mut rng)).max(0.0)));
    }
    let volume = Volume::new(spec.dims, spec.spacing, data)?;
    let repeat = |p: &[bool]| BinaryMask::from_bits(spec.dims, p.repeat(nz)).expect("sized from dims");

    let confidences = (0..nz)
        .map(|z| match spec.tumor_slices {
            Some([a, b]) if (a..=b).contains(&z) => 1.0,
            _ => 0.0,
        })
        .collect();
    Ok(Phantom {
        volume,
        bone: repeat(&bone_plane),
        table: repeat(&table_plane),
        confidences: ConfidenceSeries::new("phantom", confidences)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> PhantomSpec {
        PhantomSpec {
            dims: [96, 80, 6],
            spacing: [1.0; 3],
            leg_radius_vox: 14,
            bone_radius_vox: 5,
            table_thickness_vox: 6,
            tumor_slices: Some([2, 3]),
            noise_sigma: 15.0,
            seed,
        }
    }

    fn lattice_points(r: i64) -> usize {
        let mut n = 0;
        for x in -r..=r {
            for y in -r..=r {
                if x * x + y * y <= r * r {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_phantom(&small(9)).unwrap();
        let b = generate_phantom(&small(9)).unwrap();
        let bits = |v: &Volume| v.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.volume), bits(&b.volume));
        assert_ne!(bits(&a.volume), bits(&generate_phantom(&small(10)).unwrap().volume));
    }

    #[test]
    fn bone_count_matches_lattice_disks() {
        let spec = small(1);
        let p = generate_phantom(&spec).unwrap();
        assert_eq!(p.bone.count(), 2 * spec.dims[2] * lattice_points(spec.bone_radius_vox as i64));
        p.volume.validate().unwrap();
    }

    #[test]
    fn confidences_follow_tumor_range() {
        let p = generate_phantom(&small(1)).unwrap();
        assert_eq!(p.confidences.values(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let none = generate_phantom(&PhantomSpec { tumor_slices: None, ..small(1) }).unwrap();
        assert!(none.confidences.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_impossible_geometry() {
        assert!(generate_phantom(&PhantomSpec { bone_radius_vox: 14, ..small(1) }).is_err());
        assert!(generate_phantom(&PhantomSpec { leg_radius_vox: 30, ..small(1) }).is_err());
        assert!(generate_phantom(&PhantomSpec { tumor_slices: Some([4, 6]), ..small(1) }).is_err());
        assert!(generate_phantom(&PhantomSpec { table_thickness_vox: 40, ..small(1) }).is_err());
    }
}
