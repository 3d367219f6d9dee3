//! Statistical checks: exact equivalence of linear filtering with the
//! projection pipeline, real/imaginary decorrelation of projections,
//! spectral symmetry, and phase/coherence error metrics.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::despeckle::{Despeckler, GuidedWeights, LinearDespeckler, LinearFilterWeights};
use crate::error::{Error, Result};
use crate::model::{
    off_diagonal, upper_pairs, wrapped_arg, CovarianceField, MultiChannelSlc, ReflectivityImage, SingleChannelSlc,
};
use crate::projection::{run_muchapro, DirectionSet, Parameterization, PipelineOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Undefined,
}

/// Which side of the threshold counts as passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PassIf {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationEntry {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass_if: PassIf,
    pub status: Status,
    pub sample_size: usize,
    pub formula: String,
    /// Advisory entries are reported but do not gate anything.
    pub advisory: bool,
    pub components: BTreeMap<String, f64>,
}

impl ValidationEntry {
    fn judged(
        name: impl Into<String>,
        statistic: f64,
        threshold: f64,
        pass_if: PassIf,
        sample_size: usize,
        formula: impl Into<String>,
    ) -> Self {
        let status = if !statistic.is_finite() {
            Status::Undefined
        } else if match pass_if {
            PassIf::Below => statistic < threshold,
            PassIf::Above => statistic > threshold,
        } {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            name: name.into(),
            statistic,
            threshold,
            pass_if,
            status,
            sample_size,
            formula: formula.into(),
            advisory: false,
            components: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    pub fn push(&mut self, entry: ValidationEntry) {
        self.entries.push(entry);
    }

    pub fn get(&self, name: &str) -> Option<&ValidationEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("report serialization: {e}")))
    }
}

/// Outer-product parameter planes `z z^H` in the real Hermitian order.
fn outer_product_planes(img: &MultiChannelSlc) -> Array3<f64> {
    let dim = img.channels();
    let (h, w) = (img.height(), img.width());
    let pairs = upper_pairs(dim);
    let np = pairs.len();
    let data = img.data();
    let mut planes = Array3::<f64>::zeros((dim * dim, h, w));
    for d in 0..dim {
        let ch = data.index_axis(Axis(0), d);
        planes.index_axis_mut(Axis(0), d).assign(&ch.mapv(|z| z.norm_sqr()));
    }
    for (t, &(i, j)) in pairs.iter().enumerate() {
        let zi = data.index_axis(Axis(0), i);
        let zj = data.index_axis(Axis(0), j);
        let prod = ndarray::Zip::from(&zi).and(&zj).map_collect(|a, b| a * b.conj());
        planes.index_axis_mut(Axis(0), dim + t).assign(&prod.mapv(|m| m.re));
        planes.index_axis_mut(Axis(0), dim + np + t).assign(&prod.mapv(|m| m.im));
    }
    planes
}

/// `sum_l w_l z_l z_l^H`: the weights applied directly to the outer products.
pub fn direct_multichannel_filter(img: &MultiChannelSlc, weights: &LinearFilterWeights) -> Result<CovarianceField> {
    let planes = outer_product_planes(img);
    let filtered: Vec<Array2<f64>> = planes
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|p| weights.apply(p))
        .collect::<Result<_>>()?;
    let views: Vec<_> = filtered.iter().map(|a| a.view()).collect();
    let data = ndarray::stack(Axis(0), &views).expect("planes share a shape");
    CovarianceField::new(img.channels(), data)
}

fn frobenius(v: &[f64], dim: usize) -> f64 {
    let diag: f64 = v[..dim].iter().map(|x| x * x).sum();
    let off: f64 = v[dim..].iter().map(|x| x * x).sum();
    (diag + 2.0 * off).sqrt()
}

/// Largest per-pixel `||A - B||_F / ||B||_F`.
pub fn max_relative_frobenius(a: &CovarianceField, b: &CovarianceField) -> Result<f64> {
    if a.dim() != b.dim() || a.height() != b.height() || a.width() != b.width() {
        return Err(Error::DimensionMismatch("covariance fields differ in shape".into()));
    }
    let dim = a.dim();
    let w = a.width();
    Ok((0..a.pixels())
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / w, idx % w);
            let va = a.vector_at(r, c);
            let vb = b.vector_at(r, c);
            let diff: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
            let nb = frobenius(&vb, dim);
            let nd = frobenius(&diff, dim);
            if nb > 0.0 {
                nd / nb
            } else if nd > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .reduce(|| 0.0, f64::max))
}

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;

/// Filters `img` directly and through the projection pipeline with the same
/// weights; passes when the two agree to [`EQUIVALENCE_TOLERANCE`].
pub fn check_linear_equivalence(
    img: &MultiChannelSlc,
    dirs: &DirectionSet,
    weights: &LinearFilterWeights,
    mode: Parameterization,
) -> Result<ValidationEntry> {
    let direct = direct_multichannel_filter(img, weights)?;
    let options = PipelineOptions {
        mode,
        ..Default::default()
    };
    let mucha = run_muchapro(img, dirs, &LinearDespeckler::new(weights.clone()), &options)?.field;
    let d = max_relative_frobenius(&mucha, &direct)?;
    Ok(ValidationEntry::judged(
        "linear_equivalence",
        d,
        EQUIVALENCE_TOLERANCE,
        PassIf::Below,
        img.height() * img.width(),
        "max over pixels of ||C_mucha - C_direct||_F / ||C_direct||_F",
    ))
}

/// Weights recomputed from the intensity of whatever image it is given, as
/// in an adaptive speckle filter. Violates the data-independence assumption.
#[derive(Debug, Clone, Copy)]
pub struct IntensityAdaptiveDespeckler {
    pub radius: usize,
}

impl IntensityAdaptiveDespeckler {
    fn weights(&self, guide: Array2<f64>) -> Result<LinearFilterWeights> {
        let mut sorted: Vec<f64> = guide.iter().cloned().collect();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let bandwidth = sorted[sorted.len() / 2].max(f64::MIN_POSITIVE);
        let map = GuidedWeights {
            guide,
            radius: self.radius,
            bandwidth,
        }
        .weight_map()?;
        Ok(LinearFilterWeights::Map(map))
    }
}

impl Despeckler for IntensityAdaptiveDespeckler {
    fn name(&self) -> String {
        format!("intensity-adaptive:{}", self.radius)
    }

    fn despeckle(&self, img: &SingleChannelSlc) -> Result<ReflectivityImage> {
        let intensity = img.intensity();
        let out = self.weights(intensity.clone())?.apply(intensity.view())?;
        ReflectivityImage::new(out)
    }
}

pub const NEGATIVE_CONTROL_MIN: f64 = 1e-3;

/// Same comparison with intensity-adaptive weights: each projection picks
/// its own weights, the direct path uses the span `sum_d |z_d|^2`. Passes
/// when the discrepancy exceeds [`NEGATIVE_CONTROL_MIN`].
pub fn check_adaptive_control(
    img: &MultiChannelSlc,
    dirs: &DirectionSet,
    radius: usize,
    mode: Parameterization,
) -> Result<ValidationEntry> {
    let adaptive = IntensityAdaptiveDespeckler { radius };
    let span = img.data().map_axis(Axis(0), |z| z.iter().map(|v| v.norm_sqr()).sum::<f64>());
    let direct = direct_multichannel_filter(img, &adaptive.weights(span)?)?;
    let options = PipelineOptions {
        mode,
        ..Default::default()
    };
    let mucha = run_muchapro(img, dirs, &adaptive, &options)?.field;
    let d = max_relative_frobenius(&mucha, &direct)?;
    Ok(ValidationEntry::judged(
        "adaptive_control",
        d,
        NEGATIVE_CONTROL_MIN,
        PassIf::Above,
        img.height() * img.width(),
        "max over pixels of ||C_mucha - C_direct||_F / ||C_direct||_F with intensity-adaptive weights",
    ))
}

/// Pearson correlation; `None` when either sample has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// `Re s[r, c]` against `Im s[r + dy, c + dx]` over all valid positions.
fn lagged_correlation(s: &Array2<Complex64>, dy: usize, dx: usize) -> Option<f64> {
    let (h, w) = s.dim();
    if dy >= h || dx >= w {
        return None;
    }
    let re = s.slice(ndarray::s![..h - dy, ..w - dx]).iter().map(|z| z.re).collect::<Vec<_>>();
    let im = s.slice(ndarray::s![dy.., dx..]).iter().map(|z| z.im).collect::<Vec<_>>();
    pearson(&re, &im)
}

/// Correlation threshold in standard errors.
pub const REIM_THRESHOLD_SE: f64 = 4.0;

/// Re/Im Pearson correlations at lags (0,0), (0,1), (1,0); passes when
/// each magnitude is below `4 / sqrt(N)`.
pub fn check_reim_independence(s: &SingleChannelSlc) -> ValidationEntry {
    let (h, w) = s.dim();
    let n = h * w;
    let threshold = REIM_THRESHOLD_SE / (n as f64).sqrt();
    let data = s.data();
    let lags = [("lag_0_0", 0, 0), ("lag_0_1", 0, 1), ("lag_1_0", 1, 0)];
    let mut components = BTreeMap::new();
    let mut worst = 0.0f64;
    let mut undefined = false;
    for (name, dy, dx) in lags {
        match lagged_correlation(data, dy, dx) {
            Some(r) => {
                components.insert(name.to_string(), r);
                worst = worst.max(r.abs());
            }
            None => {
                components.insert(name.to_string(), f64::NAN);
                undefined = true;
            }
        }
    }
    let mut e = ValidationEntry::judged(
        "reim_independence",
        if undefined { f64::NAN } else { worst },
        threshold,
        PassIf::Below,
        n,
        "max |pearson(Re s[r,c], Im s[r+dy,c+dx])| over lags (0,0),(0,1),(1,0); threshold 4/sqrt(N)",
    );
    e.components = components;
    e
}

/// `s` multiplied by `e^{i omega col}`: a complex-valued system response
/// that shifts the spectrum.
pub fn phase_ramp(s: &SingleChannelSlc, omega: f64) -> SingleChannelSlc {
    let mut out = s.data().clone();
    for ((_, col), z) in out.indexed_iter_mut() {
        *z *= Complex64::from_polar(1.0, omega * col as f64);
    }
    SingleChannelSlc::new(out).expect("unit-modulus factor keeps values finite")
}

pub const SPECTRUM_ADVISORY: f64 = 0.05;

fn fft2(s: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = s.dim();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);
    let mut out = s.as_standard_layout().into_owned();
    for mut row in out.rows_mut() {
        let mut buf: Vec<Complex64> = row.to_vec();
        row_fft.process(&mut buf);
        row.iter_mut().zip(buf).for_each(|(a, b)| *a = b);
    }
    for mut col in out.columns_mut() {
        let mut buf: Vec<Complex64> = col.to_vec();
        col_fft.process(&mut buf);
        col.iter_mut().zip(buf).for_each(|(a, b)| *a = b);
    }
    out
}

/// Circular moving average with a square window of odd side.
fn circular_box(p: &Array2<f64>, side: usize) -> Array2<f64> {
    let (h, w) = p.dim();
    let r = (side / 2) as isize;
    let norm = 1.0 / side as f64;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            tmp[(i, j)] = (-r..=r)
                .map(|d| p[(i, (j as isize + d).rem_euclid(w as isize) as usize)])
                .sum::<f64>()
                * norm;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[(i, j)] = (-r..=r)
                .map(|d| tmp[((i as isize + d).rem_euclid(h as isize) as usize, j)])
                .sum::<f64>()
                * norm;
        }
    }
    out
}

/// Side of the periodogram smoothing window for an `h x w` image: the
/// largest odd number not above `min(h, w) / 6`, at least 1.
pub fn spectrum_smoothing_side(h: usize, w: usize) -> usize {
    let s = (h.min(w) / 6).max(1);
    if s.is_multiple_of(2) {
        s - 1
    } else {
        s
    }
}

/// Relative L1 distance between the smoothed power spectrum and its point
/// reflection about DC. Advisory threshold [`SPECTRUM_ADVISORY`].
pub fn check_spectrum_symmetry(s: &SingleChannelSlc) -> ValidationEntry {
    let (h, w) = s.dim();
    let spec = fft2(s.data());
    let side = spectrum_smoothing_side(h, w);
    let power = circular_box(&spec.mapv(|z| z.norm_sqr()), side);
    let mut diff = 0.0;
    let mut total = 0.0;
    for ((i, j), p) in power.indexed_iter() {
        let q = power[((h - i) % h, (w - j) % w)];
        diff += (p - q).abs();
        total += p;
    }
    let stat = if total > 0.0 { diff / (2.0 * total) } else { f64::NAN };
    let mut e = ValidationEntry::judged(
        "spectrum_symmetry",
        stat,
        SPECTRUM_ADVISORY,
        PassIf::Below,
        h * w,
        "sum |P(k) - P(-k)| / (2 sum P(k)), P the periodogram smoothed by a circular box window",
    );
    e.advisory = true;
    e.components.insert("smoothing_side".into(), side as f64);
    e
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCoherenceError {
    /// `sqrt(mean(arg(e^{i(phi_est - phi_true)})^2))`.
    pub phase_rmse: f64,
    pub coherence_mae: f64,
    /// Pixels left out of the coherence error because a diagonal was not positive.
    pub coherence_excluded: usize,
}

fn coherence_at(f: &CovarianceField, i: usize, j: usize, r: usize, c: usize) -> Option<f64> {
    let a = f.reflectivity(i)[(r, c)];
    let b = f.reflectivity(j)[(r, c)];
    (a > 0.0 && b > 0.0).then(|| off_diagonal(f, i, j, r, c).norm() / (a * b).sqrt())
}

pub fn phase_coherence_error(
    estimated: &CovarianceField,
    truth: &CovarianceField,
    i: usize,
    j: usize,
) -> Result<PhaseCoherenceError> {
    if estimated.dim() != truth.dim()
        || estimated.height() != truth.height()
        || estimated.width() != truth.width()
    {
        return Err(Error::DimensionMismatch(format!(
            "estimated field is D={} {}x{}, truth is D={} {}x{}",
            estimated.dim(),
            estimated.height(),
            estimated.width(),
            truth.dim(),
            truth.height(),
            truth.width()
        )));
    }
    let dim = truth.dim();
    if i >= dim || j >= dim || i == j {
        return Err(Error::InvalidArgument(format!("channels ({i}, {j}) invalid for D={dim}")));
    }
    let (h, w) = (truth.height(), truth.width());
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut counted = 0usize;
    for r in 0..h {
        for c in 0..w {
            let ze = off_diagonal(estimated, i, j, r, c);
            let zt = off_diagonal(truth, i, j, r, c);
            let d = wrapped_arg(Complex64::from_polar(1.0, wrapped_arg(ze) - wrapped_arg(zt)));
            sq += d * d;
            if let (Some(ge), Some(gt)) = (coherence_at(estimated, i, j, r, c), coherence_at(truth, i, j, r, c)) {
                abs += (ge - gt).abs();
                counted += 1;
            }
        }
    }
    let n = h * w;
    Ok(PhaseCoherenceError {
        phase_rmse: (sq / n as f64).sqrt(),
        coherence_mae: if counted > 0 { abs / counted as f64 } else { f64::NAN },
        coherence_excluded: n - counted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CMatrix;
    use crate::sim::{apply_transfer, make_phantom, sample_goodman, CoherenceMap, PhantomKind, PhantomSpec, TransferKernel};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sample(dim: usize, n: usize, seed: u64) -> MultiChannelSlc {
        let mut m = CMatrix::identity(dim, dim);
        for i in 0..dim {
            for j in i + 1..dim {
                m[(i, j)] = c(0.3, 0.2 * (j - i) as f64);
                m[(j, i)] = m[(i, j)].conj();
            }
        }
        sample_goodman(&CovarianceField::constant(n, n, &m).unwrap(), seed).unwrap()
    }

    fn spanning_dirs(dim: usize) -> DirectionSet {
        let mut dirs = Vec::new();
        for i in 0..dim {
            let mut e = vec![c(0.0, 0.0); dim];
            e[i] = c(1.0, 0.0);
            dirs.push(e);
        }
        for i in 0..dim {
            for j in i + 1..dim {
                let mut a = vec![c(0.0, 0.0); dim];
                a[i] = c(1.0, 0.0);
                a[j] = c(1.0, 0.0);
                dirs.push(a);
                let mut b = vec![c(0.0, 0.0); dim];
                b[i] = c(1.0, 0.0);
                b[j] = c(0.0, 1.0);
                dirs.push(b);
            }
        }
        DirectionSet::new(dim, dirs).unwrap()
    }

    #[test]
    fn linear_equivalence_boxcar_and_global() {
        let img = sample(2, 24, 1);
        let e = check_linear_equivalence(
            &img,
            &spanning_dirs(2),
            &LinearFilterWeights::boxcar(5).unwrap(),
            Parameterization::HermitianReal,
        )
        .unwrap();
        assert!(e.passed(), "{e:?}");
        let img3 = sample(3, 12, 2);
        let e = check_linear_equivalence(&img3, &spanning_dirs(3), &LinearFilterWeights::Global, Parameterization::HermitianReal)
            .unwrap();
        assert!(e.passed(), "{e:?}");
    }

    #[test]
    fn adaptive_control_detects_data_dependent_weights() {
        let img = sample(2, 24, 3);
        let e = check_adaptive_control(&img, &spanning_dirs(2), 2, Parameterization::HermitianReal).unwrap();
        assert!(e.passed(), "{e:?}");
    }

    #[test]
    fn reim_real_image_is_undefined() {
        let s = SingleChannelSlc::new(Array2::from_shape_fn((8, 8), |(r, c)| Complex64::new((r * c) as f64, 0.0)))
            .unwrap();
        let e = check_reim_independence(&s);
        assert_eq!(e.status, Status::Undefined);
    }

    #[test]
    fn reim_filtered_passes_and_ramp_fails() {
        let img = sample(2, 128, 4);
        let filtered = apply_transfer(&img, &TransferKernel::gaussian(0.5, 5).unwrap()).unwrap();
        let s = filtered.channel(0);
        assert!(check_reim_independence(&s).passed());
        let e = check_reim_independence(&phase_ramp(&s, std::f64::consts::FRAC_PI_2));
        assert_eq!(e.status, Status::Fail, "{e:?}");
    }

    #[test]
    fn spectrum_symmetry_contrast() {
        let img = sample(1, 128, 5);
        let white = img.channel(0);
        let e = check_spectrum_symmetry(&white);
        assert!(e.statistic < 0.1, "{e:?}");
        let filtered = apply_transfer(&img, &TransferKernel::gaussian(1.0, 5).unwrap()).unwrap().channel(0);
        assert!(check_spectrum_symmetry(&filtered).statistic < 0.1);
        let e = check_spectrum_symmetry(&phase_ramp(&filtered, std::f64::consts::FRAC_PI_2));
        assert!(e.statistic > 0.3, "{e:?}");
    }

    #[test]
    fn phase_errors() {
        let spec = |phase0: f64| PhantomSpec {
            kind: PhantomKind::Fringes {
                reflectivity: 2.0,
                frequency: (0.05, 0.02),
                phase0,
                coherence: CoherenceMap::RowRamp { from: 0.3, to: 0.9 },
            },
            dim: 2,
            height: 16,
            width: 16,
        };
        let truth = make_phantom(&spec(0.0)).unwrap();
        let same = phase_coherence_error(&truth, &truth, 0, 1).unwrap();
        assert_eq!((same.phase_rmse, same.coherence_mae), (0.0, 0.0));
        let shifted = make_phantom(&spec(std::f64::consts::FRAC_PI_2)).unwrap();
        let e = phase_coherence_error(&shifted, &truth, 0, 1).unwrap();
        assert!((e.phase_rmse - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(e.coherence_mae < 1e-12);
        let wrong = CovarianceField::zeros(2, 4, 4);
        assert!(phase_coherence_error(&wrong, &truth, 0, 1).is_err());
    }

    #[test]
    fn report_serializes() {
        let mut r = ValidationReport::default();
        r.push(check_reim_independence(&sample(1, 16, 1).channel(0)));
        let text = r.to_toml().unwrap();
        assert!(text.contains("reim_independence"));
        assert!(text.contains("lag_0_1"));
    }
}
