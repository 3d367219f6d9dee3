//! Single-channel despecklers: complex image in, nonnegative reflectivity out.

use std::path::PathBuf;
use std::process::Command;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{check_kernel_fits, convolve_mirror, convolve_separable_mirror, gaussian_taps, mirror};
use crate::io;
use crate::model::{MultiChannelSlc, ReflectivityImage, SingleChannelSlc};

/// Euler-Mascheroni constant: `E[ln I] = ln v - EULER_GAMMA` for 1-look intensity.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub trait Despeckler: Send + Sync {
    fn name(&self) -> String;

    fn despeckle(&self, img: &SingleChannelSlc) -> Result<ReflectivityImage>;
}

/// Non-negative convolution weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightKernel {
    data: Array2<f64>,
}

impl WeightKernel {
    /// Normalizes `data` to unit sum.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h % 2 == 0 || w % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "weight kernel must have odd sides, got {h}x{w}"
            )));
        }
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let sum = data.sum();
        if sum == 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        Ok(Self {
            data: data / sum,
        })
    }

    pub fn boxcar(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("boxcar size must be positive".into()));
        }
        Self::new(Array2::ones((size, size)))
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let taps = gaussian_taps(sigma, radius);
        Self::new(Array2::from_shape_fn((taps.len(), taps.len()), |(a, b)| taps[a] * taps[b]))
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Spatially varying weights computed from an external guide image only:
/// within a `(2 radius + 1)^2` window, `w_lm ∝ exp(-(g_l - g_m)^2 / h^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedWeights {
    pub guide: Array2<f64>,
    pub radius: usize,
    pub bandwidth: f64,
}

/// Explicit per-pixel weight lists `(neighbor index, weight)`, each summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    height: usize,
    width: usize,
    weights: Vec<Vec<(u32, f64)>>,
}

impl WeightMap {
    pub fn new(height: usize, width: usize, weights: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        if weights.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} weight lists for a {height}x{width} image",
                weights.len()
            )));
        }
        let n = (height * width) as u32;
        for (idx, list) in weights.iter().enumerate() {
            let sum: f64 = list.iter().map(|(_, w)| w).sum();
            if list.iter().any(|&(m, w)| m >= n || !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "weights of pixel {idx} must be nonnegative, in range and sum to 1 (sum {sum})"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn apply(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        let w = self.width;
        let flat: Vec<f64> = self
            .weights
            .par_iter()
            .map(|list| {
                list.iter()
                    .map(|&(m, wt)| wt * values[(m as usize / w, m as usize % w)])
                    .sum()
            })
            .collect();
        Array2::from_shape_vec((self.height, self.width), flat).expect("shape matches")
    }
}

impl GuidedWeights {
    pub fn weight_map(&self) -> Result<WeightMap> {
        let (h, w) = self.guide.dim();
        let side = 2 * self.radius + 1;
        check_kernel_fits(side, side, h, w)?;
        if !(self.bandwidth > 0.0) {
            return Err(Error::InvalidArgument("guide bandwidth must be positive".into()));
        }
        let r = self.radius as isize;
        let weights = (0..h * w)
            .into_par_iter()
            .map(|idx| {
                let (row, col) = (idx / w, idx % w);
                let g0 = self.guide[(row, col)];
                let mut list = Vec::with_capacity(side * side);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let rr = mirror(row as isize + dy, h);
                        let cc = mirror(col as isize + dx, w);
                        let d = (self.guide[(rr, cc)] - g0) / self.bandwidth;
                        list.push(((rr * w + cc) as u32, (-d * d).exp()));
                    }
                }
                let sum: f64 = list.iter().map(|(_, x)| x).sum();
                list.iter_mut().for_each(|(_, x)| *x /= sum);
                list
            })
            .collect();
        WeightMap::new(h, w, weights)
    }
}

/// Data-independent weights for linear despeckling.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearFilterWeights {
    Kernel(WeightKernel),
    Map(WeightMap),
    /// Uniform average over the whole image.
    Global,
}

impl LinearFilterWeights {
    pub fn boxcar(size: usize) -> Result<Self> {
        Ok(Self::Kernel(WeightKernel::boxcar(size)?))
    }

    /// Weighted average of a real raster under these weights (mirror boundary).
    pub fn apply(&self, values: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (h, w) = values.dim();
        match self {
            LinearFilterWeights::Kernel(k) => {
                let (kh, kw) = k.data.dim();
                check_kernel_fits(kh, kw, h, w)?;
                Ok(convolve_mirror(values, k.data.view()))
            }
            LinearFilterWeights::Map(m) => {
                if m.dim() != (h, w) {
                    return Err(Error::DimensionMismatch(format!(
                        "weight map is {:?}, image is {:?}",
                        m.dim(),
                        (h, w)
                    )));
                }
                Ok(m.apply(values))
            }
            LinearFilterWeights::Global => {
                let mean = values.sum() / (h * w) as f64;
                Ok(Array2::from_elem((h, w), mean))
            }
        }
    }
}

/// `|s|^2` pixelwise (single-look intensity).
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDespeckler;

impl Despeckler for IdentityDespeckler {
    fn name(&self) -> String {
        "identity".into()
    }

    fn despeckle(&self, img: &SingleChannelSlc) -> Result<ReflectivityImage> {
        ReflectivityImage::new(img.intensity())
    }
}

/// Weighted average of `|s|^2`.
#[derive(Debug, Clone)]
pub struct LinearDespeckler {
    pub weights: LinearFilterWeights,
}

impl LinearDespeckler {
    pub fn new(weights: LinearFilterWeights) -> Self {
        Self { weights }
    }
}

impl Despeckler for LinearDespeckler {
    fn name(&self) -> String {
        match &self.weights {
            LinearFilterWeights::Kernel(k) => format!("linear:{}x{}", k.data.nrows(), k.data.ncols()),
            LinearFilterWeights::Map(_) => "linear:map".into(),
            LinearFilterWeights::Global => "linear:global".into(),
        }
    }

    fn despeckle(&self, img: &SingleChannelSlc) -> Result<ReflectivityImage> {
        ReflectivityImage::new(self.weights.apply(img.intensity().view())?)
    }
}

/// Gaussian smoothing of the log-intensity with the 1-look bias removed.
#[derive(Debug, Clone, Copy)]
pub struct LogGaussianDespeckler {
    sigma: f64,
}

impl LogGaussianDespeckler {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Despeckler for LogGaussianDespeckler {
    fn name(&self) -> String {
        format!("log-gaussian:{}", self.sigma)
    }

    fn despeckle(&self, img: &SingleChannelSlc) -> Result<ReflectivityImage> {
        let intensity = img.intensity();
        let (h, w) = intensity.dim();
        let mean = intensity.sum() / (h * w) as f64;
        let eps = 1e-10 * mean;
        if eps == 0.0 {
            log::warn!("log-gaussian despeckler received an all-zero image");
            return ReflectivityImage::new(Array2::zeros((h, w)));
        }
        let logs = intensity.mapv(|i| (i + eps).ln());
        let radius = ((3.0 * self.sigma).ceil() as usize).min(h.min(w) - 1);
        let taps = gaussian_taps(self.sigma, radius);
        let smooth = convolve_separable_mirror(logs.view(), &taps, &taps);
        ReflectivityImage::new(smooth.mapv(|l| (l + EULER_GAMMA).exp()))
    }
}

/// Decimates the complex image before the wrapped despeckler and replicates
/// the result back to the input grid (nearest neighbour).
pub struct Decimated<D> {
    pub inner: D,
    pub factor: usize,
}

impl<D: Despeckler> Despeckler for Decimated<D> {
    fn name(&self) -> String {
        format!("{}+decimate:{}", self.inner.name(), self.factor)
    }

    fn despeckle(&self, img: &SingleChannelSlc) -> Result<ReflectivityImage> {
        let f = self.factor.max(1);
        let (h, w) = img.dim();
        let (hs, ws) = (h.div_ceil(f), w.div_ceil(f));
        let small = SingleChannelSlc::new(Array2::from_shape_fn((hs, ws), |(r, c)| {
            img.data()[(r * f, c * f)]
        }))?;
        let out = self.inner.despeckle(&small)?;
        ReflectivityImage::new(Array2::from_shape_fn((h, w), |(r, c)| out.data()[(r / f, c / f)]))
    }
}

impl Despeckler for Box<dyn Despeckler> {
    fn name(&self) -> String {
        self.as_ref().name()
    }

    fn despeckle(&self, img: &SingleChannelSlc) -> Result<ReflectivityImage> {
        self.as_ref().despeckle(img)
    }
}

/// Runs `<program> <args..> <input.mcslc> <output.refl>` and reads the
/// reflectivity raster back.
#[derive(Debug, Clone)]
pub struct ExternalDespeckler {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalDespeckler {
    /// Splits a whitespace-separated command line into program and leading arguments.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty external command".into()))?;
        Ok(Self {
            program: program.into(),
            args: parts.map(str::to_string).collect(),
        })
    }
}

impl Despeckler for ExternalDespeckler {
    fn name(&self) -> String {
        format!("external:{}", self.program.display())
    }

    fn despeckle(&self, img: &SingleChannelSlc) -> Result<ReflectivityImage> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("input.mcslc");
        let output = dir.path().join("output.refl");
        let mc = MultiChannelSlc::from_channels(std::slice::from_ref(img))?;
        io::write_mcslc_file(&input, &mc)?;
        let result = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .output()
            .map_err(|e| {
                Error::External(format!("failed to spawn '{}': {e}", self.program.display()))
            })?;
        if !result.status.success() {
            return Err(Error::External(format!(
                "'{}' exited with {}: {}",
                self.program.display(),
                result.status,
                String::from_utf8_lossy(&result.stderr).trim()
            )));
        }
        let refl = io::read_reflectivity_file(&output)
            .map_err(|e| Error::External(format!("malformed output: {e}")))?;
        if refl.dim() != img.dim() {
            return Err(Error::External(format!(
                "output is {:?}, input was {:?}",
                refl.dim(),
                img.dim()
            )));
        }
        Ok(refl)
    }
}

/// Parses `NAME[:param]`: `identity`, `boxcar:N`, `gaussian:SIGMA` (linear),
/// `log-gaussian:SIGMA`, `external:COMMAND ARGS..`.
pub fn parse_despeckler(spec: &str) -> Result<Box<dyn Despeckler>> {
    let (name, param) = match spec.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (spec, None),
    };
    let number = |what: &str| -> Result<f64> {
        param
            .ok_or_else(|| Error::InvalidArgument(format!("despeckler '{name}' needs a {what}")))?
            .parse::<f64>()
            .map_err(|e| Error::InvalidArgument(format!("bad {what} for '{name}': {e}")))
    };
    match name {
        "identity" => Ok(Box::new(IdentityDespeckler)),
        "boxcar" => {
            let n = number("window size")?;
            if n < 1.0 || n.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!("boxcar size must be a positive integer, got {n}")));
            }
            Ok(Box::new(LinearDespeckler::new(LinearFilterWeights::boxcar(n as usize)?)))
        }
        "gaussian" => Ok(Box::new(LinearDespeckler::new(LinearFilterWeights::Kernel(
            WeightKernel::gaussian(number("sigma")?)?,
        )))),
        "log-gaussian" => Ok(Box::new(LogGaussianDespeckler::new(number("sigma")?)?)),
        "external" => {
            let cmd = param.ok_or_else(|| Error::InvalidArgument("external despeckler needs a command".into()))?;
            Ok(Box::new(ExternalDespeckler::from_command_line(cmd)?))
        }
        other => Err(Error::InvalidArgument(format!("unknown despeckler '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CMatrix, CovarianceField};
    use crate::sim::sample_goodman;
    use num_complex::Complex64;

    fn constant_speckle(h: usize, w: usize, v: f64, seed: u64) -> SingleChannelSlc {
        let f = CovarianceField::constant(h, w, &(CMatrix::identity(1, 1) * Complex64::new(v, 0.0))).unwrap();
        sample_goodman(&f, seed).unwrap().channel(0)
    }

    #[test]
    fn identity_intensity() {
        let one = SingleChannelSlc::new(Array2::from_elem((2, 2), Complex64::new(1.0, 0.0))).unwrap();
        assert!(IdentityDespeckler.despeckle(&one).unwrap().data().iter().all(|&x| x == 1.0));
        let three = SingleChannelSlc::new(Array2::from_elem((1, 1), Complex64::new(0.0, 3.0))).unwrap();
        assert_eq!(IdentityDespeckler.despeckle(&three).unwrap().data()[(0, 0)], 9.0);
    }

    #[test]
    fn identity_mean_matches_reflectivity() {
        let s = constant_speckle(200, 200, 2.5, 11);
        let out = IdentityDespeckler.despeckle(&s).unwrap();
        let mean = out.data().mean().unwrap();
        // std of the mean of 4e4 exponentials is 2.5 / 200
        assert!((mean - 2.5).abs() < 4.0 * 2.5 / 200.0, "{mean}");
    }

    #[test]
    fn delta_kernel_matches_identity() {
        let s = constant_speckle(16, 16, 1.0, 3);
        let lin = LinearDespeckler::new(LinearFilterWeights::boxcar(1).unwrap());
        assert_eq!(lin.despeckle(&s).unwrap(), IdentityDespeckler.despeckle(&s).unwrap());
    }

    #[test]
    fn boxcar_reduces_variance_about_25x() {
        let s = constant_speckle(256, 256, 1.0, 5);
        let raw = IdentityDespeckler.despeckle(&s).unwrap();
        let boxed = LinearDespeckler::new(LinearFilterWeights::boxcar(5).unwrap())
            .despeckle(&s)
            .unwrap();
        let var = |a: &Array2<f64>| {
            let m = a.mean().unwrap();
            a.mapv(|x| (x - m) * (x - m)).mean().unwrap()
        };
        let ratio = var(raw.data()) / var(boxed.data());
        assert!((ratio - 25.0).abs() < 2.5, "variance ratio {ratio}");
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(WeightKernel::new(Array2::zeros((3, 3))).is_err());
        assert!(WeightKernel::new(Array2::from_elem((3, 3), -1.0)).is_err());
        assert!(WeightKernel::new(Array2::ones((2, 3))).is_err());
    }

    #[test]
    fn log_gaussian_bias_correction() {
        // large sigma: the bias-corrected geometric mean tends to the reflectivity
        let s = constant_speckle(128, 128, 3.0, 21);
        let out = LogGaussianDespeckler::new(12.0).unwrap().despeckle(&s).unwrap();
        let mean = out.data().mean().unwrap();
        assert!((mean - 3.0).abs() < 0.03 * 3.0, "{mean}");
    }

    #[test]
    fn log_gaussian_tiny_sigma_overshoots_raw_intensity() {
        let s = constant_speckle(64, 64, 1.0, 4);
        let out = LogGaussianDespeckler::new(0.05).unwrap().despeckle(&s).unwrap();
        let raw = s.intensity();
        for (a, b) in out.data().iter().zip(raw.iter()) {
            // epsilon floor perturbs only the darkest samples
            assert!((a / b - EULER_GAMMA.exp()).abs() < 1e-4);
        }
    }

    #[test]
    fn log_gaussian_all_zero() {
        let z = SingleChannelSlc::new(Array2::zeros((4, 4))).unwrap();
        let out = LogGaussianDespeckler::new(1.0).unwrap().despeckle(&z).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scaling_equivariance() {
        let s = constant_speckle(32, 32, 1.0, 8);
        let alpha = 3.7;
        let scaled = SingleChannelSlc::new(s.data().mapv(|z| z * alpha)).unwrap();
        let despecklers: Vec<(Box<dyn Despeckler>, f64)> = vec![
            (Box::new(IdentityDespeckler), 1e-13),
            (Box::new(LinearDespeckler::new(LinearFilterWeights::boxcar(5).unwrap())), 1e-13),
            (Box::new(LogGaussianDespeckler::new(1.5).unwrap()), 1e-8),
        ];
        for (d, tol) in despecklers {
            let a = d.despeckle(&s).unwrap();
            let b = d.despeckle(&scaled).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((y - alpha * alpha * x).abs() <= tol * y.abs(), "{}", d.name());
            }
        }
    }

    #[test]
    fn guided_weights_are_normalized() {
        let guide = Array2::from_shape_fn((8, 9), |(r, c)| if c < 4 { 0.0 } else { 1.0 + r as f64 * 0.1 });
        let map = GuidedWeights { guide, radius: 2, bandwidth: 0.3 }.weight_map().unwrap();
        for list in &map.weights {
            let s: f64 = list.iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_specs() {
        assert_eq!(parse_despeckler("identity").unwrap().name(), "identity");
        assert_eq!(parse_despeckler("boxcar:5").unwrap().name(), "linear:5x5");
        assert_eq!(parse_despeckler("log-gaussian:2").unwrap().name(), "log-gaussian:2");
        assert!(parse_despeckler("boxcar").is_err());
        assert!(parse_despeckler("boxcar:2.5").is_err());
        assert!(parse_despeckler("nlmeans:3").is_err());
        assert!(parse_despeckler("external:").is_err());
    }

    #[test]
    fn missing_external_program() {
        let d = ExternalDespeckler::from_command_line("/nonexistent/despeckler-binary").unwrap();
        let s = constant_speckle(4, 4, 1.0, 1);
        match d.despeckle(&s) {
            Err(Error::External(msg)) => assert!(msg.contains("failed to spawn")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decimated_wrapper_keeps_shape() {
        let s = constant_speckle(9, 10, 1.0, 1);
        let d = Decimated { inner: IdentityDespeckler, factor: 2 };
        let out = d.despeckle(&s).unwrap();
        assert_eq!(out.dim(), (9, 10));
        assert_eq!(out.data()[(3, 5)], s.data()[(2, 4)].norm_sqr());
    }
}
