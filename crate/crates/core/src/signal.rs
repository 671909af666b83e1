//! 1D filtering helpers shared by the bone and confidence filters.

/// Maps any integer index onto `0..n` by half-sample reflection
/// (`d c b a | a b c d | d c b a`), repeating as often as needed.
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized Gaussian weights for offsets `-r..=r` with `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let r = (3.0 * sigma).ceil() as isize;
    let mut w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Correlates `x` with an odd-length, centred kernel under reflect padding.
pub fn convolve_reflect(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let r = (kernel.len() / 2) as isize;
    (0..n as isize)
        .map(|i| kernel.iter().enumerate().map(|(k, w)| w * x[reflect_index(i + k as isize - r, n)]).sum())
        .collect()
}

/// Same as [`convolve_reflect`] over a strided view, writing into `out`.
pub(crate) fn convolve_strided(src: &[f64], start: usize, stride: usize, n: usize, kernel: &[f64], out: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    for i in 0..n {
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let j = reflect_index(i as isize + k as isize - r, n);
            acc += w * src[start + j * stride];
        }
        out[start + i * stride] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_matches_definition() {
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert!((-5..5).all(|i| reflect_index(i, 1) == 0));
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.5, 1.0, 2.0, 3.7] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k.len() {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
    }
}
