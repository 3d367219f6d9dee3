//! Image and covariance containers plus the real Hermitian parameterization.
//!
//! A `D x D` Hermitian matrix is stored as `D^2` reals: the `D` diagonal
//! entries, then the real parts of the strict upper triangle, then the
//! matching imaginary parts. Upper-triangle pairs are enumerated row-major,
//! `(0,1), (0,2), .., (0,D-1), (1,2), ..`.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Relative tolerance used when checking Hermitian symmetry.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Upper-triangle index pairs `(i, j)` with `i < j`, row-major.
pub fn upper_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(dim * dim.saturating_sub(1) / 2);
    for i in 0..dim {
        for j in i + 1..dim {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Position of the pair `(i, j)`, `i < j`, in [`upper_pairs`].
pub fn pair_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < dim);
    // rows 0..i contribute (dim-1) + (dim-2) + .. + (dim-i) pairs
    i * dim - i * (i + 1) / 2 + (j - i - 1)
}

fn check_finite_c<'a>(values: impl IntoIterator<Item = &'a Complex64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_finite_r<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// A `D`-channel single-look complex image, indexed `(channel, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSlc {
    data: Array3<Complex64>,
}

impl MultiChannelSlc {
    pub fn new(data: Array3<Complex64>) -> Result<Self> {
        let (d, h, w) = data.dim();
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {d}x{h}x{w}"
            )));
        }
        check_finite_c(data.iter(), "multi-channel image")?;
        Ok(Self { data })
    }

    pub fn from_channels(channels: &[SingleChannelSlc]) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channels".into()))?;
        let (h, w) = first.dim();
        let mut data = Array3::zeros((channels.len(), h, w));
        for (d, ch) in channels.iter().enumerate() {
            if ch.dim() != (h, w) {
                return Err(Error::DimensionMismatch(format!(
                    "channel {d} is {:?}, expected {:?}",
                    ch.dim(),
                    (h, w)
                )));
            }
            data.index_axis_mut(ndarray::Axis(0), d).assign(ch.data());
        }
        Ok(Self { data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<Complex64> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> Vec<Complex64> {
        (0..self.channels())
            .map(|d| self.data[(d, row, col)])
            .collect()
    }

    pub fn channel(&self, d: usize) -> SingleChannelSlc {
        SingleChannelSlc {
            data: self.data.index_axis(ndarray::Axis(0), d).to_owned(),
        }
    }
}

/// A single-channel complex image.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleChannelSlc {
    data: Array2<Complex64>,
}

impl SingleChannelSlc {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("empty single-channel image".into()));
        }
        check_finite_c(data.iter(), "single-channel image")?;
        Ok(Self { data })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, Complex64> {
        self.data.view()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm_sqr())
    }
}

/// Real-valued reflectivity (intensity) raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivityImage {
    data: Array2<f64>,
}

impl ReflectivityImage {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("empty reflectivity image".into()));
        }
        check_finite_r(data.iter(), "reflectivity image")?;
        Ok(Self { data })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// Per-pixel Hermitian covariance matrices in the real parameterization,
/// stored as `D^2` planes of shape `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceField {
    dim: usize,
    data: Array3<f64>,
}

impl CovarianceField {
    pub fn new(dim: usize, data: Array3<f64>) -> Result<Self> {
        let (planes, h, w) = data.dim();
        if dim == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument("empty covariance field".into()));
        }
        if planes != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "covariance field with D={dim} needs {} planes, got {planes}",
                dim * dim
            )));
        }
        check_finite_r(data.iter(), "covariance field")?;
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize, height: usize, width: usize) -> Self {
        Self {
            dim,
            data: Array3::zeros((dim * dim, height, width)),
        }
    }

    /// Fills every pixel with the same matrix.
    pub fn constant(height: usize, width: usize, matrix: &CMatrix) -> Result<Self> {
        let v = vectorize_hermitian(matrix)?;
        let dim = matrix.nrows();
        let mut field = Self::zeros(dim, height, width);
        for (p, value) in v.iter().enumerate() {
            field
                .data
                .index_axis_mut(ndarray::Axis(0), p)
                .fill(*value);
        }
        Ok(field)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    pub fn vector_at(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.dim * self.dim)
            .map(|p| self.data[(p, row, col)])
            .collect()
    }

    pub fn set_vector(&mut self, row: usize, col: usize, v: &[f64]) {
        debug_assert_eq!(v.len(), self.dim * self.dim);
        for (p, value) in v.iter().enumerate() {
            self.data[(p, row, col)] = *value;
        }
    }

    pub fn matrix_at(&self, row: usize, col: usize) -> CMatrix {
        devectorize_hermitian(self.dim, &self.vector_at(row, col))
    }

    pub fn set_matrix(&mut self, row: usize, col: usize, matrix: &CMatrix) -> Result<()> {
        if matrix.nrows() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{}, field has D={}",
                matrix.nrows(),
                matrix.ncols(),
                self.dim
            )));
        }
        let v = vectorize_hermitian(matrix)?;
        self.set_vector(row, col, &v);
        Ok(())
    }

    /// Diagonal plane `d` (the reflectivity of channel `d`).
    pub fn reflectivity(&self, d: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), d)
    }

    /// Builds a field from per-pixel parameter vectors laid out pixel-major.
    pub(crate) fn from_pixel_major(
        dim: usize,
        height: usize,
        width: usize,
        values: &[f64],
    ) -> Self {
        let n = dim * dim;
        debug_assert_eq!(values.len(), n * height * width);
        let data = Array3::from_shape_fn((n, height, width), |(p, r, c)| {
            values[(r * width + c) * n + p]
        });
        Self { dim, data }
    }
}

/// Largest `|C_ij - conj(C_ji)|` over all entries.
pub fn hermitian_asymmetry(c: &CMatrix) -> f64 {
    let n = c.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((c[(i, j)] - c[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Maps a Hermitian matrix to its `D^2` real parameters.
pub fn vectorize_hermitian(c: &CMatrix) -> Result<Vec<f64>> {
    let dim = c.nrows();
    if c.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, not square",
            c.nrows(),
            c.ncols()
        )));
    }
    check_finite_c(c.iter(), "matrix entry")?;
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let asymmetry = hermitian_asymmetry(c);
    if asymmetry > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian { asymmetry });
    }
    let pairs = upper_pairs(dim);
    let mut v = Vec::with_capacity(dim * dim);
    v.extend((0..dim).map(|d| c[(d, d)].re));
    v.extend(pairs.iter().map(|&(i, j)| c[(i, j)].re));
    v.extend(pairs.iter().map(|&(i, j)| c[(i, j)].im));
    Ok(v)
}

/// Inverse of [`vectorize_hermitian`].
///
/// Panics if `v.len() != dim * dim`.
pub fn devectorize_hermitian(dim: usize, v: &[f64]) -> CMatrix {
    assert_eq!(v.len(), dim * dim, "parameter vector length");
    let pairs = upper_pairs(dim);
    let npairs = pairs.len();
    let mut c = CMatrix::zeros(dim, dim);
    for d in 0..dim {
        c[(d, d)] = Complex64::new(v[d], 0.0);
    }
    for (t, &(i, j)) in pairs.iter().enumerate() {
        let z = Complex64::new(v[dim + t], v[dim + npairs + t]);
        c[(i, j)] = z;
        c[(j, i)] = z.conj();
    }
    c
}

/// `p^H C p` for Hermitian `C`; the (round-off) imaginary part is dropped.
pub fn quadratic_form(c: &CMatrix, p: &[Complex64]) -> Result<f64> {
    let dim = c.nrows();
    if c.ncols() != dim || p.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "matrix {}x{} with vector of length {}",
            c.nrows(),
            c.ncols(),
            p.len()
        )));
    }
    let mut acc = 0.0;
    for i in 0..dim {
        // diagonal term, then the off-diagonal pair counted twice
        acc += p[i].norm_sqr() * c[(i, i)].re;
        for j in i + 1..dim {
            acc += 2.0 * (p[i].conj() * c[(i, j)] * p[j]).re;
        }
    }
    Ok(acc)
}

/// `C_ij` read from the parameter planes, for any `i != j`.
pub(crate) fn off_diagonal(field: &CovarianceField, i: usize, j: usize, row: usize, col: usize) -> Complex64 {
    let dim = field.dim();
    let npairs = dim * (dim - 1) / 2;
    let (a, b, conj) = if i < j { (i, j, false) } else { (j, i, true) };
    let t = pair_index(dim, a, b);
    let z = Complex64::new(
        field.data[(dim + t, row, col)],
        field.data[(dim + npairs + t, row, col)],
    );
    if conj {
        z.conj()
    } else {
        z
    }
}

/// Lower Cholesky factor of a Hermitian matrix, reading the lower triangle.
/// `None` unless every pivot is real and strictly positive.
pub fn cholesky_hermitian(c: &CMatrix) -> Option<CMatrix> {
    let n = c.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = c[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = c[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Phase in `(-pi, pi]`, with `arg(0) = 0`.
pub fn wrapped_arg(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    if a <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Reflectivities, interferometric phase and coherence for a channel pair.
#[derive(Debug, Clone)]
pub struct InterferometricProducts {
    pub reflectivity_i: Array2<f64>,
    pub reflectivity_j: Array2<f64>,
    pub phase: Array2<f64>,
    pub coherence: Array2<f64>,
    /// Pixels whose coherence exceeds 1 (not positive semi-definite).
    pub over_unity: usize,
}

pub fn interferometric_products(
    field: &CovarianceField,
    i: usize,
    j: usize,
) -> Result<InterferometricProducts> {
    let dim = field.dim();
    if i == j || i >= dim || j >= dim {
        return Err(Error::InvalidArgument(format!(
            "channel pair ({i}, {j}) invalid for D={dim}"
        )));
    }
    let (h, w) = (field.height(), field.width());
    let mut phase = Array2::zeros((h, w));
    let mut coherence = Array2::zeros((h, w));
    let mut over_unity = 0;
    for r in 0..h {
        for c in 0..w {
            let ci = field.data[(i, r, c)];
            let cj = field.data[(j, r, c)];
            for (channel, value) in [(i, ci), (j, cj)] {
                if value <= 0.0 {
                    return Err(Error::NonPositiveReflectivity {
                        row: r,
                        col: c,
                        channel,
                        value,
                    });
                }
            }
            let z = off_diagonal(field, i, j, r, c);
            let g = z.norm() / (ci * cj).sqrt();
            if g > 1.0 {
                over_unity += 1;
            }
            phase[(r, c)] = wrapped_arg(z);
            coherence[(r, c)] = g;
        }
    }
    if over_unity > 0 {
        log::warn!("{over_unity} pixels have coherence above 1; consider enforce-pd first");
    }
    Ok(InterferometricProducts {
        reflectivity_i: field.reflectivity(i).to_owned(),
        reflectivity_j: field.reflectivity(j).to_owned(),
        phase,
        coherence,
        over_unity,
    })
}
