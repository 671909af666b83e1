//! Volume containers on disk.
//!
//! `.ostv` layout (little-endian), 64-byte header then voxels:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `OSTV`                            |
//! | 4      | 4    | version (`u32`, currently 1)            |
//! | 8      | 12   | dims `nx, ny, nz` (`u32` each)          |
//! | 20     | 12   | spacing `sx, sy, sz` in mm (`f32` each) |
//! | 32     | 4    | dtype tag (`u32`: 1 = u8, 2 = u16, 3 = f32) |
//! | 36     | 28   | reserved, zero                          |
//!
//! PNG stacks are directories of 16-bit grayscale slices whose file stems
//! carry the zero-padded slice index, plus an optional `manifest.json`
//! holding `{"spacing": [sx, sy, sz], "slice_order": ["0000.png", ...]}`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Slice;
use crate::volume::{BinaryMask, Spacing, Volume};

pub const OSTV_MAGIC: &[u8; 4] = b"OSTV";
pub const OSTV_VERSION: u32 = 1;
pub const OSTV_HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Dtype {
    U8 = 1,
    U16 = 2,
    F32 = 3,
}

impl Dtype {
    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(Dtype::U8),
            2 => Some(Dtype::U16),
            3 => Some(Dtype::F32),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFormat {
    RawVolume,
    PngStack,
}

impl VolumeFormat {
    /// Directories are PNG stacks, everything else is `.ostv`.
    pub fn infer(path: &Path) -> Self {
        if path.is_dir() {
            VolumeFormat::PngStack
        } else {
            VolumeFormat::RawVolume
        }
    }
}

pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<Volume> {
    match format {
        VolumeFormat::RawVolume => read_ostv(path).map(|(v, _)| v),
        VolumeFormat::PngStack => read_png_stack(path),
    }
}

pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = volume.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_ostv(path, volume.dims(), volume.spacing(), Dtype::F32, &bytes)
}

pub fn save_mask(mask: &BinaryMask, spacing: Spacing, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.bits().iter().map(|&b| b as u8).collect();
    write_ostv(path, mask.dims(), spacing, Dtype::U8, &bytes)
}

/// Reads any `.ostv` file as a mask: voxels with a non-zero value are set.
pub fn load_mask(path: &Path) -> Result<(BinaryMask, Spacing)> {
    let (volume, _) = read_ostv(path)?;
    Ok((BinaryMask::from_volume(&volume, 0.0), volume.spacing()))
}

fn write_ostv(path: &Path, dims: [usize; 3], spacing: Spacing, dtype: Dtype, payload: &[u8]) -> Result<()> {
    let mut header = [0u8; OSTV_HEADER_LEN];
    header[0..4].copy_from_slice(OSTV_MAGIC);
    header[4..8].copy_from_slice(&OSTV_VERSION.to_le_bytes());
    for (i, d) in dims.iter().enumerate() {
        let d = u32::try_from(*d).map_err(|_| Error::Invalid(format!("dimension {d} exceeds u32")))?;
        header[8 + 4 * i..12 + 4 * i].copy_from_slice(&d.to_le_bytes());
    }
    for (i, s) in spacing.iter().enumerate() {
        header[20 + 4 * i..24 + 4 * i].copy_from_slice(&(*s as f32).to_le_bytes());
    }
    header[32..36].copy_from_slice(&(dtype as u32).to_le_bytes());

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header).and_then(|_| w.write_all(payload)).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn read_ostv(path: &Path) -> Result<(Volume, Dtype)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < OSTV_HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[0..4] != OSTV_MAGIC {
        return Err(Error::format(path, "bad magic, expected OSTV"));
    }
    let version = le_u32(&bytes[4..8]);
    if version != OSTV_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let dims = [0, 1, 2].map(|i| le_u32(&bytes[8 + 4 * i..]) as usize);
    let spacing = [0, 1, 2].map(|i| le_f32(&bytes[20 + 4 * i..]) as f64);
    let tag = le_u32(&bytes[32..36]);
    let dtype = Dtype::from_tag(tag).ok_or_else(|| Error::format(path, format!("unknown dtype tag {tag}")))?;

    let n: usize = dims.iter().product();
    let payload = &bytes[OSTV_HEADER_LEN..];
    if payload.len() != n * dtype.width() {
        return Err(Error::format(
            path,
            format!("expected {} bytes of voxel data for dims {dims:?}, found {}", n * dtype.width(), payload.len()),
        ));
    }
    let data: Vec<f32> = match dtype {
        Dtype::U8 => payload.iter().map(|&b| b as f32).collect(),
        Dtype::U16 => payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f32).collect(),
        Dtype::F32 => payload.chunks_exact(4).map(le_f32).collect(),
    };
    let volume = Volume::new(dims, spacing, data).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((volume, dtype))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StackManifest {
    #[serde(default)]
    pub spacing: Option<[f64; 3]>,
    #[serde(default)]
    pub slice_order: Option<Vec<String>>,
}

/// Leading digits of the stem, read as the slice index (`0007.png` -> 7).
fn slice_index_of(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

fn read_png_stack(dir: &Path) -> Result<Volume> {
    if !dir.exists() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")));
    }
    let manifest_path = dir.join("manifest.json");
    let manifest: StackManifest = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?
    } else {
        StackManifest::default()
    };

    let files: Vec<PathBuf> = match &manifest.slice_order {
        Some(order) => order.iter().map(|name| dir.join(name)).collect(),
        None => {
            let mut files = Vec::new();
            for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
                let path = entry.map_err(|e| Error::io(dir, e))?.path();
                let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
                if is_png {
                    let idx = slice_index_of(&path)
                        .ok_or_else(|| Error::format(&path, "file name carries no slice index"))?;
                    files.push((idx, path));
                }
            }
            files.sort();
            files.into_iter().map(|(_, p)| p).collect()
        }
    };
    if files.is_empty() {
        return Err(Error::NoSlices(dir.to_path_buf()));
    }

    let mut slices = Vec::with_capacity(files.len());
    for path in &files {
        let slice = read_png_slice(path)?;
        if let Some(first) = slices.first() {
            let first: &Slice = first;
            if !first.same_shape(&slice) {
                return Err(Error::format(
                    path,
                    format!(
                        "slice is {}x{}, expected {}x{}",
                        slice.width(),
                        slice.height(),
                        first.width(),
                        first.height()
                    ),
                ));
            }
        }
        slices.push(slice);
    }
    Volume::from_slices(&slices, manifest.spacing.unwrap_or([1.0; 3]))
}

/// Reads a grayscale PNG without rescaling (a 16-bit pixel of 1000 reads as 1000.0).
pub fn read_png_slice(path: &Path) -> Result<Slice> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        other => {
            return Err(Error::format(path, format!("expected grayscale PNG, found {:?}", other.color())));
        }
    };
    Ok(Slice::from_vec(w, h, data))
}

/// Writes a slice as 16-bit grayscale, rounding and clamping to `0..=65535`.
pub fn write_png_slice(slice: &Slice, path: &Path) -> Result<()> {
    let raw: Vec<u16> = slice.as_slice().iter().map(|&v| v.round().clamp(0.0, 65535.0) as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(slice.width() as u32, slice.height() as u32, raw).expect("buffer sized from slice");
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a grayscale PNG scaled to `[0, 1]` by its bit depth.
pub fn read_png_unit(path: &Path) -> Result<Slice> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let scale = match img.color() {
        image::ColorType::L16 => 65535.0,
        image::ColorType::L8 => 255.0,
        other => return Err(Error::format(path, format!("expected grayscale PNG, found {other:?}"))),
    };
    Ok(read_png_slice(path)?.map(|&v| v / scale))
}

/// Writes a `[0, 1]` slice as 16-bit grayscale.
pub fn write_png_unit(slice: &Slice, path: &Path) -> Result<()> {
    write_png_slice(&slice.map(|&v| v.clamp(0.0, 1.0) * 65535.0), path)
}

/// Writes `dir/0000.png ...` plus `manifest.json`.
pub fn save_png_stack(volume: &Volume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = volume.slice_count().max(1).to_string().len().max(4);
    let mut order = Vec::with_capacity(volume.slice_count());
    for z in 0..volume.slice_count() {
        let name = format!("{z:0width$}.png");
        write_png_slice(&volume.slice(z), &dir.join(&name))?;
        order.push(name);
    }
    let manifest = StackManifest { spacing: Some(volume.spacing()), slice_order: Some(order) };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n: usize = dims.iter().product();
        Volume::new(dims, [0.5, 0.75, 2.5], (0..n).map(|i| (i % 4096) as f32).collect()).unwrap()
    }

    #[test]
    fn ostv_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ostv");
        save_volume(&ramp([3, 2, 1]), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 64 + 6 * 4);
        assert_eq!(&bytes[0..4], b"OSTV");
        assert_eq!(le_u32(&bytes[4..]), 1);
        assert_eq!([le_u32(&bytes[8..]), le_u32(&bytes[12..]), le_u32(&bytes[16..])], [3, 2, 1]);
        assert_eq!(le_f32(&bytes[24..]), 0.75);
        assert_eq!(le_u32(&bytes[32..]), 3);
        assert!(bytes[36..64].iter().all(|&b| b == 0));
    }

    #[test]
    fn ostv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ostv");
        let v = Volume::new([2, 2, 2], [0.3, 0.3, 1.1], vec![0.1, -2.5, 1e9, 3.0, 0.0, 7.25, -0.0, 1.0 / 3.0]).unwrap();
        save_volume(&v, &path).unwrap();
        let back = load_volume(&path, VolumeFormat::RawVolume).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing(), v.spacing());
        let bits = |x: &Volume| x.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&v));
    }

    #[test]
    fn ostv_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ostv");
        fs::write(&path, b"NOPE").unwrap();
        let err = load_volume(&path, VolumeFormat::RawVolume).unwrap_err();
        assert!(err.to_string().contains("bad.ostv"), "{err}");

        save_volume(&ramp([2, 2, 2]), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&path, &bytes).unwrap();
        assert!(load_volume(&path, VolumeFormat::RawVolume).is_err());
        assert!(load_volume(&dir.path().join("missing.ostv"), VolumeFormat::RawVolume).is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ostv");
        let mut m = BinaryMask::empty([3, 3, 2]);
        m.set(0, 1, 1, true);
        save_mask(&m, [1.0, 1.0, 2.0], &path).unwrap();
        let (back, spacing) = load_mask(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(spacing, [1.0, 1.0, 2.0]);
    }

    #[test]
    fn png_stack_of_three_slices() {
        let dir = tempfile::tempdir().unwrap();
        for z in 0..3 {
            let s = Slice::from_fn(4, 4, |x, y| (1000 * z + 10 * y + x) as f64);
            write_png_slice(&s, &dir.path().join(format!("{z:03}.png"))).unwrap();
        }
        let v = load_volume(dir.path(), VolumeFormat::PngStack).unwrap();
        assert_eq!(v.dims(), [4, 4, 3]);
        assert_eq!(v.spacing(), [1.0; 3]);
        assert_eq!(v.get(3, 2, 2), 2023.0);
    }

    #[test]
    fn png_stack_round_trip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let v = ramp([5, 3, 12]);
        save_png_stack(&v, dir.path()).unwrap();
        assert_eq!(load_volume(dir.path(), VolumeFormat::PngStack).unwrap(), v);
    }

    #[test]
    fn png_stack_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_volume(dir.path(), VolumeFormat::PngStack).unwrap_err();
        assert!(err.to_string().contains("no slices found"), "{err}");

        write_png_slice(&Slice::filled(4, 4, 1.0), &dir.path().join("0000.png")).unwrap();
        write_png_slice(&Slice::filled(5, 4, 1.0), &dir.path().join("0001.png")).unwrap();
        let err = load_volume(dir.path(), VolumeFormat::PngStack).unwrap_err();
        assert!(err.to_string().contains("0001.png"), "{err}");
    }
}
