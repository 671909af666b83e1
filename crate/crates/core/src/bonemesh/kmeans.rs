//! Exact one-dimensional k-means.
//!
//! Optimal 1D clusters are contiguous runs of the sorted values, so the
//! SSE-optimal partition is found by dynamic programming over the distinct
//! levels. Each layer is filled by divide and conquer on the monotone split
//! point, which costs `O(k m log m)` for `m` distinct levels.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Ascending.
    pub centers: Vec<f64>,
    /// Cluster index of each input value, into `centers`.
    pub labels: Vec<usize>,
    /// Within-cluster sum of squared errors.
    pub sse: f64,
}

/// Sorted distinct values with multiplicities and prefix sums. Sums are
/// taken about the overall mean to keep the squared terms small.
struct Levels {
    values: Vec<f64>,
    counts: Vec<f64>,
    cum_n: Vec<f64>,
    cum_s: Vec<f64>,
    cum_s2: Vec<f64>,
}

impl Levels {
    fn new(data: &[f64]) -> Self {
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut values: Vec<f64> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for v in sorted {
            if values.last() == Some(&v) {
                *counts.last_mut().unwrap() += 1.0;
            } else {
                values.push(v);
                counts.push(1.0);
            }
        }
        let shift = data.iter().sum::<f64>() / data.len().max(1) as f64;
        let m = values.len();
        let (mut cum_n, mut cum_s, mut cum_s2) = (vec![0.0; m + 1], vec![0.0; m + 1], vec![0.0; m + 1]);
        for i in 0..m {
            let d = values[i] - shift;
            cum_n[i + 1] = cum_n[i] + counts[i];
            cum_s[i + 1] = cum_s[i] + counts[i] * d;
            cum_s2[i + 1] = cum_s2[i] + counts[i] * d * d;
        }
        Self { values, counts, cum_n, cum_s, cum_s2 }
    }

    fn len(&self) -> usize {
        self.values.len()
    }

    /// SSE of levels `i..j` about their mean.
    fn cost(&self, i: usize, j: usize) -> f64 {
        let n = self.cum_n[j] - self.cum_n[i];
        let s = self.cum_s[j] - self.cum_s[i];
        (self.cum_s2[j] - self.cum_s2[i] - s * s / n).max(0.0)
    }

    fn mean(&self, i: usize, j: usize) -> f64 {
        let (mut n, mut s) = (0.0, 0.0);
        for l in i..j {
            n += self.counts[l];
            s += self.counts[l] * self.values[l];
        }
        s / n
    }
}

/// Fills `cur[j]` for `j in lo..hi`, knowing the best split lies in `opt_lo..=opt_hi`.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    levels: &Levels,
    prev: &[f64],
    cur: &mut [f64],
    split: &mut [usize],
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo >= hi {
        return;
    }
    let j = (lo + hi) / 2;
    let (mut best, mut arg) = (f64::INFINITY, opt_lo);
    for i in opt_lo..=opt_hi.min(j - 1) {
        let c = prev[i] + levels.cost(i, j);
        if c < best {
            best = c;
            arg = i;
        }
    }
    cur[j] = best;
    split[j] = arg;
    fill_layer(levels, prev, cur, split, lo, j, opt_lo, arg);
    fill_layer(levels, prev, cur, split, j + 1, hi, arg, opt_hi);
}

/// SSE-optimal partition of `values` into `k` clusters.
pub fn kmeans_1d(values: &[f64], k: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Invalid("k must be >= 1".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("k-means input contains non-finite values".into()));
    }
    let levels = Levels::new(values);
    let m = levels.len();
    if m < k {
        return Err(Error::TooFewDistinct { k });
    }
    // best[j] is the optimal cost of the first j levels with c clusters;
    // splits[c][j] is where the last of those clusters starts.
    let mut best: Vec<f64> = (0..=m).map(|j| if j == 0 { 0.0 } else { levels.cost(0, j) }).collect();
    let mut splits = vec![vec![0usize; m + 1]];
    for c in 2..=k {
        let mut cur = vec![f64::INFINITY; m + 1];
        let mut split = vec![0usize; m + 1];
        fill_layer(&levels, &best, &mut cur, &mut split, c, m + 1, c - 1, m - 1);
        best = cur;
        splits.push(split);
    }
    let mut bounds = vec![m];
    let mut j = m;
    for split in splits.iter().rev() {
        j = split[j];
        bounds.push(j);
    }
    bounds.reverse();

    let centers: Vec<f64> = bounds.windows(2).map(|w| levels.mean(w[0], w[1])).collect();
    let mut sse = 0.0;
    for (w, c) in bounds.windows(2).zip(&centers) {
        for l in w[0]..w[1] {
            sse += levels.counts[l] * (levels.values[l] - c).powi(2);
        }
    }
    let labels = values
        .iter()
        .map(|v| {
            let level = levels.values.partition_point(|x| x < v);
            bounds.partition_point(|&start| start <= level) - 1
        })
        .collect();
    Ok(KMeans { centers, labels, sse })
}
