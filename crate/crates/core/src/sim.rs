//! Fully developed speckle simulation and synthetic covariance phantoms.

use std::f64::consts::PI;

use nalgebra::DVector;
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{check_kernel_fits, convolve_mirror, gaussian_taps};
use crate::model::{vectorize_hermitian, CMatrix, CovarianceField, MultiChannelSlc};

/// Eigenvalues down to `-PSD_TOL * lambda_max` are accepted and clipped to 0.
pub const PSD_TOL: f64 = 1e-10;

/// Independent, reproducible random stream keyed on `(seed, stream)`.
pub(crate) fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Real, unit-gain spatial response applied identically to every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferKernel {
    data: Array2<f64>,
}

impl TransferKernel {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h % 2 == 0 || w % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "transfer kernel must have odd sides, got {h}x{w}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("transfer kernel".into()));
        }
        let sum: f64 = data.sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "transfer kernel must have unit DC gain, sums to {sum}"
            )));
        }
        Ok(Self { data })
    }

    pub fn delta() -> Self {
        Self {
            data: Array2::ones((1, 1)),
        }
    }

    pub fn boxcar(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("boxcar size must be positive".into()));
        }
        let n = (size * size) as f64;
        Self::new(Array2::from_elem((size, size), 1.0 / n))
    }

    /// Separable sampled Gaussian of standard deviation `sigma` (pixels),
    /// truncated to `size x size`.
    pub fn gaussian(sigma: f64, size: usize) -> Result<Self> {
        if !(sigma > 0.0) || size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "gaussian kernel needs sigma > 0 and odd size, got sigma={sigma}, size={size}"
            )));
        }
        let taps = gaussian_taps(sigma, size / 2);
        let mut data = Array2::from_shape_fn((size, size), |(a, b)| taps[a] * taps[b]);
        // renormalize the outer product so the gain check holds to the last ulp
        let sum = data.sum();
        data.mapv_inplace(|v| v / sum);
        Self::new(data)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Normalized autocorrelation of the kernel at an integer lag.
    pub fn autocorrelation(&self, dy: isize, dx: isize) -> f64 {
        let (h, w) = self.data.dim();
        let mut num = 0.0;
        for r in 0..h as isize {
            for c in 0..w as isize {
                let (r2, c2) = (r + dy, c + dx);
                if r2 >= 0 && c2 >= 0 && (r2 as usize) < h && (c2 as usize) < w {
                    num += self.data[(r as usize, c as usize)] * self.data[(r2 as usize, c2 as usize)];
                }
            }
        }
        num / self.data.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `A` with `A A^H = C`: Cholesky, or a clipped eigendecomposition for
/// semi-definite input. `None` when `C` is indefinite beyond tolerance.
fn sampling_factor(c: &CMatrix) -> std::result::Result<CMatrix, f64> {
    if let Some(l) = crate::model::cholesky_hermitian(c) {
        return Ok(l);
    }
    let eig = c.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin < -PSD_TOL * lmax || (lmax == 0.0 && lmin < 0.0) {
        return Err(lmin);
    }
    let roots = DVector::from_fn(c.nrows(), |i, _| {
        Complex64::new(eig.eigenvalues[i].max(0.0).sqrt(), 0.0)
    });
    Ok(&eig.eigenvectors * CMatrix::from_diagonal(&roots))
}

/// Draws one circular complex Gaussian vector per pixel with covariance
/// `C_l`; each component of `w` has variance 1/2 so `E|z_d|^2 = C_dd`.
///
/// Pixel `l` uses random stream `l` of `seed`, so the output does not depend
/// on how the work is split across threads.
pub fn sample_goodman(truth: &CovarianceField, seed: u64) -> Result<MultiChannelSlc> {
    let dim = truth.dim();
    let (h, w) = (truth.height(), truth.width());
    let pixels: Vec<Vec<Complex64>> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / w, idx % w);
            let cov = truth.matrix_at(r, c);
            let a = sampling_factor(&cov).map_err(|min_eigenvalue| Error::Indefinite {
                row: r,
                col: c,
                min_eigenvalue,
            })?;
            let mut rng = substream(seed, idx as u64);
            let white = DVector::from_fn(dim, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            });
            Ok((a * white).iter().cloned().collect())
        })
        .collect::<Result<_>>()?;
    let data = Array3::from_shape_fn((dim, h, w), |(d, r, c)| pixels[r * w + c][d]);
    MultiChannelSlc::new(data)
}

/// Convolves every channel with the same real kernel (mirror boundary).
pub fn apply_transfer(img: &MultiChannelSlc, kernel: &TransferKernel) -> Result<MultiChannelSlc> {
    let (kh, kw) = kernel.data.dim();
    check_kernel_fits(kh, kw, img.height(), img.width())?;
    let mut out = img.data().clone();
    for (d, mut channel) in out.axis_iter_mut(Axis(0)).enumerate() {
        let src = img.data().index_axis(Axis(0), d);
        channel.assign(&convolve_mirror(src, kernel.data.view()));
    }
    MultiChannelSlc::new(out)
}

/// Spatial description of the coherence magnitude in a fringe phantom.
#[derive(Debug, Clone, PartialEq)]
pub enum CoherenceMap {
    Constant(f64),
    /// Linear in the row index, `from` on the first row and `to` on the last.
    RowRamp { from: f64, to: f64 },
    /// Linear in the column index.
    ColumnRamp { from: f64, to: f64 },
}

impl CoherenceMap {
    fn at(&self, r: usize, c: usize, h: usize, w: usize) -> f64 {
        let lerp = |a: f64, b: f64, t: usize, n: usize| {
            if n <= 1 {
                a
            } else {
                a + (b - a) * t as f64 / (n - 1) as f64
            }
        };
        match *self {
            CoherenceMap::Constant(g) => g,
            CoherenceMap::RowRamp { from, to } => lerp(from, to, r, h),
            CoherenceMap::ColumnRamp { from, to } => lerp(from, to, c, w),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            CoherenceMap::Constant(g) => (g, g),
            CoherenceMap::RowRamp { from, to } | CoherenceMap::ColumnRamp { from, to } => {
                (from.min(to), from.max(to))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicRegion {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub matrix: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomKind {
    Constant(CMatrix),
    /// Two-channel interferogram `[[r, r g e^{i phi}], [.., r]]` with a linear
    /// phase ramp `phi = 2 pi (fx col + fy row) + phase0`.
    Fringes {
        reflectivity: f64,
        /// Cycles per pixel along columns (x) and rows (y).
        frequency: (f64, f64),
        phase0: f64,
        coherence: CoherenceMap,
    },
    /// Rectangular regions painted in order over a background matrix.
    Mosaic {
        background: CMatrix,
        regions: Vec<MosaicRegion>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
}

fn check_psd(c: &CMatrix, what: &str) -> Result<()> {
    vectorize_hermitian(c)?;
    let eig = c.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin < -PSD_TOL * lmax.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(format!(
            "{what} is not positive semi-definite (smallest eigenvalue {lmin:e})"
        )));
    }
    Ok(())
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<CovarianceField> {
    let (dim, h, w) = (spec.dim, spec.height, spec.width);
    if dim == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument("phantom dimensions must be positive".into()));
    }
    let check_dim = |m: &CMatrix, what: &str| -> Result<()> {
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {}x{}, phantom has D={dim}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_psd(m, what)
    };
    match &spec.kind {
        PhantomKind::Constant(m) => {
            check_dim(m, "constant matrix")?;
            CovarianceField::constant(h, w, m)
        }
        PhantomKind::Fringes {
            reflectivity,
            frequency,
            phase0,
            coherence,
        } => {
            if dim != 2 {
                return Err(Error::InvalidArgument(format!(
                    "fringe phantoms are two-channel, got D={dim}"
                )));
            }
            let (lo, hi) = coherence.bounds();
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
                return Err(Error::InvalidArgument(format!(
                    "coherence must lie in [0, 1], got range [{lo}, {hi}]"
                )));
            }
            if !(*reflectivity >= 0.0) || !reflectivity.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "reflectivity must be finite and nonnegative, got {reflectivity}"
                )));
            }
            let r = *reflectivity;
            let mut data = Array3::zeros((4, h, w));
            for row in 0..h {
                for col in 0..w {
                    let phi = 2.0 * PI * (frequency.0 * col as f64 + frequency.1 * row as f64) + phase0;
                    let g = coherence.at(row, col, h, w);
                    data[(0, row, col)] = r;
                    data[(1, row, col)] = r;
                    data[(2, row, col)] = r * g * phi.cos();
                    data[(3, row, col)] = r * g * phi.sin();
                }
            }
            CovarianceField::new(2, data)
        }
        PhantomKind::Mosaic {
            background,
            regions,
        } => {
            check_dim(background, "mosaic background")?;
            let mut field = CovarianceField::constant(h, w, background)?;
            for (n, region) in regions.iter().enumerate() {
                check_dim(&region.matrix, &format!("mosaic region {n}"))?;
                if region.row + region.height > h || region.col + region.width > w {
                    return Err(Error::InvalidArgument(format!(
                        "mosaic region {n} extends beyond the {h}x{w} grid"
                    )));
                }
                let v = vectorize_hermitian(&region.matrix)?;
                for r in region.row..region.row + region.height {
                    for c in region.col..region.col + region.width {
                        field.set_vector(r, c, &v);
                    }
                }
            }
            Ok(field)
        }
    }
}
