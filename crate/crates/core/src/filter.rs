//! Mirror-boundary convolution shared by the simulator and the despecklers.

use std::ops::{Add, Mul};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Reflects an out-of-range index back into `0..n` without repeating the
/// edge sample (`-1 -> 1`, `n -> n - 2`). Valid for offsets below `n`.
#[inline]
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Checks that a `kh x kw` kernel can be mirrored inside an `h x w` image.
pub(crate) fn check_kernel_fits(kh: usize, kw: usize, h: usize, w: usize) -> Result<()> {
    if kh > h || kw > w {
        return Err(Error::InvalidArgument(format!(
            "kernel {kh}x{kw} is larger than image {h}x{w}"
        )));
    }
    Ok(())
}

/// 2-D correlation of `src` with an odd-sized kernel under mirror boundaries.
///
/// For the symmetric kernels used throughout the crate this is the
/// convolution. Rows are processed in parallel.
pub(crate) fn convolve_mirror<T>(src: ArrayView2<'_, T>, kernel: ArrayView2<'_, f64>) -> Array2<T>
where
    T: Copy + Default + Send + Sync + Add<Output = T> + Mul<f64, Output = T>,
{
    let (h, w) = src.dim();
    let (kh, kw) = kernel.dim();
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let taps: Vec<(isize, isize, f64)> = kernel
        .indexed_iter()
        .filter(|(_, &k)| k != 0.0)
        .map(|((a, b), &k)| (a as isize - ry, b as isize - rx, k))
        .collect();
    let rows: Vec<Vec<T>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    let mut acc = T::default();
                    for &(dy, dx, k) in &taps {
                        let rr = mirror(r as isize + dy, h);
                        let cc = mirror(c as isize + dx, w);
                        acc = acc + src[(rr, cc)] * k;
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((h, w), |(r, c)| rows[r][c])
}

/// Separable variant: rows with `taps_x`, then columns with `taps_y`.
pub(crate) fn convolve_separable_mirror(
    src: ArrayView2<'_, f64>,
    taps_y: &[f64],
    taps_x: &[f64],
) -> Array2<f64> {
    let (h, w) = src.dim();
    let rx = (taps_x.len() / 2) as isize;
    let ry = (taps_y.len() / 2) as isize;
    let mut tmp = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (t, k) in taps_x.iter().enumerate() {
                acc += src[(r, mirror(c as isize + t as isize - rx, w))] * k;
            }
            tmp[(r, c)] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (t, k) in taps_y.iter().enumerate() {
                acc += tmp[(mirror(r as isize + t as isize - ry, h), c)] * k;
            }
            out[(r, c)] = acc;
        }
    }
    out
}

/// Normalized sampled Gaussian, truncated at `radius` samples.
pub(crate) fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let mut taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mirror_reflects_without_repeating_edge() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(-2, 5), 2);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(6, 5), 2);
        assert_eq!(mirror(3, 5), 3);
        assert_eq!(mirror(-3, 1), 0);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let src = array![[1.0, 2.0], [3.0, 4.0]];
        let out = convolve_mirror(src.view(), array![[1.0]].view());
        assert_eq!(out, src);
    }

    #[test]
    fn separable_matches_full() {
        let src = Array2::from_shape_fn((7, 9), |(r, c)| ((r * 31 + c * 17) % 11) as f64);
        let taps = gaussian_taps(1.0, 2);
        let full = Array2::from_shape_fn((5, 5), |(a, b)| taps[a] * taps[b]);
        let a = convolve_mirror(src.view(), full.view());
        let b = convolve_separable_mirror(src.view(), &taps, &taps);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
