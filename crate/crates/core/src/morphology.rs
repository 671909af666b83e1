//! Morphology with disk (2D) and ball (3D) structuring elements.
//!
//! Every element is decomposed into horizontal runs: one half-width per row
//! offset. Grey operators take clipped running min/max along rows; binary
//! operators use per-row prefix counts. Erosion ignores pixels outside the
//! image (as if +inf / set) and dilation ignores them (as if -inf / unset),
//! which keeps each pair adjoint so opening and closing are exactly idempotent.

use std::collections::VecDeque;

use crate::grid::{Mask2, Slice};
use crate::volume::BinaryMask;

/// `(dy, w)`: the disk row at offset `dy` spans `-w..=w`.
pub fn disk_rows(radius: usize) -> Vec<(isize, usize)> {
    let r = radius as isize;
    (-r..=r).map(|dy| (dy, half_width(radius * radius - (dy * dy) as usize))).collect()
}

/// `(dy, dz, w)` rows of the ball `dx² + dy² + dz² <= r²`.
pub fn ball_rows(radius: usize) -> Vec<(isize, isize, usize)> {
    let r = radius as isize;
    let mut rows = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            let d = dy * dy + dz * dz;
            if d <= r * r {
                rows.push((dy, dz, half_width((r * r - d) as usize)));
            }
        }
    }
    rows
}

/// Largest `w` with `w² <= n`.
fn half_width(n: usize) -> usize {
    let mut w = (n as f64).sqrt() as usize;
    while w * w > n {
        w -= 1;
    }
    while (w + 1) * (w + 1) <= n {
        w += 1;
    }
    w
}

/// Running extremum over the clipped window `x-w..=x+w`; `better(a, b)` keeps `a` over `b`.
fn running_extreme(row: &[f64], w: usize, out: &mut [f64], better: fn(f64, f64) -> bool) {
    let n = row.len();
    let mut dq: VecDeque<usize> = VecDeque::with_capacity(2 * w + 2);
    let mut next = 0;
    for x in 0..n {
        let hi = (x + w).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&b| !better(row[b], row[next])) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = x.saturating_sub(w);
        while dq.front().is_some_and(|&f| f < lo) {
            dq.pop_front();
        }
        out[x] = row[*dq.front().expect("window non-empty")];
    }
}

fn grey_morph(slice: &Slice, radius: usize, erode: bool) -> Slice {
    let (wd, ht) = (slice.width(), slice.height());
    let rows = disk_rows(radius);
    let better: fn(f64, f64) -> bool = if erode { |a, b| a < b } else { |a, b| a > b };
    let mut widths: Vec<usize> = rows.iter().map(|&(_, w)| w).collect();
    widths.sort_unstable();
    widths.dedup();

    // run[k][y * wd + x]: extremum along row y with half-width widths[k]
    let data = slice.as_slice();
    let runs: Vec<Vec<f64>> = widths
        .iter()
        .map(|&w| {
            let mut out = vec![0.0; wd * ht];
            for y in 0..ht {
                running_extreme(&data[y * wd..(y + 1) * wd], w, &mut out[y * wd..(y + 1) * wd], better);
            }
            out
        })
        .collect();
    let row_run: Vec<(isize, &Vec<f64>)> =
        rows.iter().map(|&(dy, w)| (dy, &runs[widths.binary_search(&w).unwrap()])).collect();

    let mut out = vec![0.0; wd * ht];
    for y in 0..ht {
        let o = &mut out[y * wd..(y + 1) * wd];
        let mut first = true;
        for &(dy, run) in &row_run {
            let yy = y as isize + dy;
            if yy < 0 || yy >= ht as isize {
                continue;
            }
            let src = &run[yy as usize * wd..(yy as usize + 1) * wd];
            if first {
                o.copy_from_slice(src);
                first = false;
            } else {
                for (a, &b) in o.iter_mut().zip(src) {
                    if better(b, *a) {
                        *a = b;
                    }
                }
            }
        }
    }
    Slice::from_vec(wd, ht, out)
}

pub fn grey_erode_disk(slice: &Slice, radius: usize) -> Slice {
    grey_morph(slice, radius, true)
}

pub fn grey_dilate_disk(slice: &Slice, radius: usize) -> Slice {
    grey_morph(slice, radius, false)
}

/// Grey opening (erosion then dilation) with the disk `dx² + dy² <= r²`.
pub fn morphological_open_disk(slice: &Slice, radius: usize) -> Slice {
    assert!(radius >= 1, "opening radius must be >= 1");
    grey_dilate_disk(&grey_erode_disk(slice, radius), radius)
}

fn prefix_rows(bits: &[bool], width: usize) -> Vec<u32> {
    let rows = bits.len() / width;
    let mut p = vec![0u32; rows * (width + 1)];
    for r in 0..rows {
        let src = &bits[r * width..(r + 1) * width];
        let dst = &mut p[r * (width + 1)..(r + 1) * (width + 1)];
        for x in 0..width {
            dst[x + 1] = dst[x] + src[x] as u32;
        }
    }
    p
}

#[inline]
fn run_count(prefix: &[u32], row: usize, width: usize, x: usize, w: usize) -> (u32, u32) {
    let lo = x.saturating_sub(w);
    let hi = (x + w).min(width - 1);
    let base = row * (width + 1);
    (prefix[base + hi + 1] - prefix[base + lo], (hi - lo + 1) as u32)
}

/// Binary morphology over a stack of rows indexed by `(y, z)`; 2D masks use `nz = 1`.
fn binary_morph(bits: &[bool], dims: [usize; 3], rows: &[(isize, isize, usize)], erode: bool) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let prefix = prefix_rows(bits, nx);
    let row_any: Vec<bool> = (0..ny * nz).map(|r| prefix[r * (nx + 1) + nx] > 0).collect();
    let mut out = vec![false; bits.len()];
    for z in 0..nz {
        for y in 0..ny {
            let row = z * ny + y;
            let neighbours: Vec<(usize, usize)> = rows
                .iter()
                .filter_map(|&(dy, dz, w)| {
                    let (yy, zz) = (y as isize + dy, z as isize + dz);
                    (yy >= 0 && yy < ny as isize && zz >= 0 && zz < nz as isize)
                        .then(|| (zz as usize * ny + yy as usize, w))
                })
                .collect();
            if !erode && !neighbours.iter().any(|&(r, _)| row_any[r]) {
                continue;
            }
            for x in 0..nx {
                let i = row * nx + x;
                out[i] = if erode {
                    bits[i] && neighbours.iter().all(|&(r, w)| {
                        let (c, len) = run_count(&prefix, r, nx, x, w);
                        c == len
                    })
                } else {
                    neighbours.iter().any(|&(r, w)| run_count(&prefix, r, nx, x, w).0 > 0)
                };
            }
        }
    }
    out
}

fn disk_as_ball_rows(radius: usize) -> Vec<(isize, isize, usize)> {
    disk_rows(radius).into_iter().map(|(dy, w)| (dy, 0, w)).collect()
}

pub fn dilate_disk(mask: &Mask2, radius: usize) -> Mask2 {
    let dims = [mask.width(), mask.height(), 1];
    Mask2::from_vec(dims[0], dims[1], binary_morph(mask.as_slice(), dims, &disk_as_ball_rows(radius), false))
}

pub fn erode_disk(mask: &Mask2, radius: usize) -> Mask2 {
    let dims = [mask.width(), mask.height(), 1];
    Mask2::from_vec(dims[0], dims[1], binary_morph(mask.as_slice(), dims, &disk_as_ball_rows(radius), true))
}

pub fn close_disk(mask: &Mask2, radius: usize) -> Mask2 {
    erode_disk(&dilate_disk(mask, radius), radius)
}

pub fn dilate_ball(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let bits = binary_morph(mask.bits(), mask.dims(), &ball_rows(radius), false);
    BinaryMask::from_bits(mask.dims(), bits).expect("same dims")
}

pub fn erode_ball(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let bits = binary_morph(mask.bits(), mask.dims(), &ball_rows(radius), true);
    BinaryMask::from_bits(mask.dims(), bits).expect("same dims")
}

pub fn close_ball(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode_ball(&dilate_ball(mask, radius), radius)
}

/// Sets every background pixel not 4-connected to the image border.
pub fn fill_holes(mask: &Mask2) -> Mask2 {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut stack = Vec::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, stack: &mut Vec<(usize, usize)>| {
        let i = y * w + x;
        if !mask.as_slice()[i] && !outside[i] {
            outside[i] = true;
            stack.push((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut stack);
        seed(x, h - 1, &mut outside, &mut stack);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut stack);
        seed(w - 1, y, &mut outside, &mut stack);
    }
    while let Some((x, y)) = stack.pop() {
        if x > 0 {
            seed(x - 1, y, &mut outside, &mut stack);
        }
        if x + 1 < w {
            seed(x + 1, y, &mut outside, &mut stack);
        }
        if y > 0 {
            seed(x, y - 1, &mut outside, &mut stack);
        }
        if y + 1 < h {
            seed(x, y + 1, &mut outside, &mut stack);
        }
    }
    Mask2::from_vec(w, h, outside.into_iter().map(|o| !o).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window oracle: min then max over in-bounds disk offsets.
    fn naive_open(s: &Slice, r: usize) -> Slice {
        let ri = r as isize;
        let offsets: Vec<(isize, isize)> = (-ri..=ri)
            .flat_map(|dy| (-ri..=ri).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= ri * ri)
            .collect();
        let pass = |src: &Slice, erode: bool| {
            Slice::from_fn(src.width(), src.height(), |x, y| {
                let vals = offsets.iter().filter_map(|&(dx, dy)| {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    (xx >= 0 && yy >= 0 && xx < src.width() as isize && yy < src.height() as isize)
                        .then(|| *src.get(xx as usize, yy as usize))
                });
                if erode {
                    vals.fold(f64::INFINITY, f64::min)
                } else {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                }
            })
        };
        pass(&pass(s, true), false)
    }

    #[test]
    fn disk_rows_match_lattice() {
        assert_eq!(disk_rows(2), vec![(-2, 0), (-1, 1), (0, 2), (1, 1), (2, 0)]);
        let n: usize = disk_rows(10).iter().map(|&(_, w)| 2 * w + 1).sum();
        assert_eq!(n, 317);
        let n: usize = ball_rows(3).iter().map(|&(_, _, w)| 2 * w + 1).sum();
        assert_eq!(n, 123);
    }

    #[test]
    fn opening_removes_single_bright_pixel() {
        let mut s = Slice::filled(9, 9, 0.0);
        s.set(4, 4, 1.0);
        assert_eq!(morphological_open_disk(&s, 2), Slice::filled(9, 9, 0.0));
    }

    #[test]
    fn opening_keeps_uniform_image() {
        let s = Slice::filled(7, 5, 3.5);
        assert_eq!(morphological_open_disk(&s, 3), s);
    }

    #[test]
    fn opening_bright_square_matches_sliding_window_oracle() {
        let s = Slice::from_fn(50, 50, |x, y| if (10..40).contains(&x) && (10..40).contains(&y) { 1.0 } else { 0.0 });
        let opened = morphological_open_disk(&s, 2);
        assert_eq!(opened, naive_open(&s, 2));
        for y in 0..50 {
            for x in 0..50 {
                if *s.get(x, y) == 0.0 {
                    assert_eq!(*opened.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn opening_matches_oracle_on_noise() {
        let mut state = 12345u64;
        let s = Slice::from_fn(23, 17, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / 1e6
        });
        for r in 1..5 {
            assert_eq!(morphological_open_disk(&s, r), naive_open(&s, r), "radius {r}");
        }
    }

    #[test]
    fn fill_holes_fills_annulus() {
        let ring = Mask2::from_fn(21, 21, |x, y| {
            let d = (x as i64 - 10).pow(2) + (y as i64 - 10).pow(2);
            (16..=64).contains(&d)
        });
        let disk = Mask2::from_fn(21, 21, |x, y| (x as i64 - 10).pow(2) + (y as i64 - 10).pow(2) <= 64);
        assert_eq!(fill_holes(&ring), disk);
    }

    #[test]
    fn closing_merges_close_blobs() {
        let m = Mask2::from_fn(20, 12, |x, y| (3..6).contains(&y) && ((2..8).contains(&x) || (9..15).contains(&x)));
        let closed = close_disk(&m, 2);
        assert!(*closed.get(8, 4));
        assert!(m.is_subset_of(&closed));
    }

    #[test]
    fn ball_closing_bridges_empty_slice() {
        let mut m = BinaryMask::empty([15, 15, 7]);
        for z in [2, 4] {
            for y in 0..15 {
                for x in 0..15 {
                    if (x as i64 - 7).pow(2) + (y as i64 - 7).pow(2) <= 16 {
                        m.set(x, y, z, true);
                    }
                }
            }
        }
        let c = close_ball(&m, 3);
        assert!(c.get(7, 7, 3));
        assert!(m.is_subset_of(&c));
        assert_eq!(close_ball(&BinaryMask::full([5, 5, 5]), 3), BinaryMask::full([5, 5, 5]));
        assert_eq!(close_ball(&BinaryMask::empty([5, 5, 5]), 3), BinaryMask::empty([5, 5, 5]));
    }
}
