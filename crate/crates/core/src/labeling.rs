//! Connected-component labeling (8-connected 2D, 26-connected 3D).

use crate::grid::Mask2;
use crate::volume::BinaryMask;

/// Labels start at 1; 0 is background. Labels follow raster order of each
/// component's first pixel.
#[derive(Debug, Clone)]
pub struct Labels {
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Labels {
    /// Pixel count per label, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

fn label_with(bits: &[bool], dims: [usize; 3], offsets: &[(isize, isize, isize)]) -> Labels {
    let [nx, ny, nz] = dims;
    let mut labels = vec![0u32; bits.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y, z) = ((i % nx) as isize, ((i / nx) % ny) as isize, (i / (nx * ny)) as isize);
            for &(dx, dy, dz) in offsets {
                let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                if xx < 0 || yy < 0 || zz < 0 || xx >= nx as isize || yy >= ny as isize || zz >= nz as isize {
                    continue;
                }
                let j = (zz as usize * ny + yy as usize) * nx + xx as usize;
                if bits[j] && labels[j] == 0 {
                    labels[j] = count;
                    stack.push(j);
                }
            }
        }
    }
    Labels { labels, count: count as usize }
}

fn neighbourhood(planar: bool) -> Vec<(isize, isize, isize)> {
    let zs: &[isize] = if planar { &[0] } else { &[-1, 0, 1] };
    let mut v = Vec::new();
    for &dz in zs {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    v.push((dx, dy, dz));
                }
            }
        }
    }
    v
}

pub fn label_8(mask: &Mask2) -> Labels {
    label_with(mask.as_slice(), [mask.width(), mask.height(), 1], &neighbourhood(true))
}

pub fn label_26(mask: &BinaryMask) -> Labels {
    label_with(mask.bits(), mask.dims(), &neighbourhood(false))
}
