//! Projection of multi-channel images onto complex directions, the
//! projection operator `Q`, least-squares covariance recovery and the full
//! project / despeckle / invert pipeline.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::despeckle::Despeckler;
use crate::error::{Error, Result};
use crate::model::{
    hermitian_asymmetry, quadratic_form, upper_pairs, vectorize_hermitian, CMatrix,
    CovarianceField, MultiChannelSlc, ReflectivityImage, SingleChannelSlc,
};
use crate::pd::{enforce_pd_field, PdEnforceParams};

/// How the covariance unknowns are parameterized in the least-squares system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Parameterization {
    /// `D^2` real unknowns (diagonal, real and imaginary upper triangle).
    #[default]
    HermitianReal,
    /// `D^2` complex unknowns `vec(C)`, Hermitian symmetry not imposed.
    ComplexUnconstrained,
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameterization::HermitianReal => "hermitian",
            Parameterization::ComplexUnconstrained => "unconstrained",
        })
    }
}

impl FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hermitian" | "hermitian-real" => Ok(Parameterization::HermitianReal),
            "unconstrained" | "complex-unconstrained" => Ok(Parameterization::ComplexUnconstrained),
            other => Err(Error::InvalidArgument(format!(
                "unknown parameterization '{other}' (expected hermitian or unconstrained)"
            ))),
        }
    }
}

/// `K` complex projection directions in `C^D`, the columns of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    dim: usize,
    directions: Vec<Vec<Complex64>>,
}

impl DirectionSet {
    pub fn new(dim: usize, directions: Vec<Vec<Complex64>>) -> Result<Self> {
        if dim == 0 || directions.is_empty() {
            return Err(Error::InvalidArgument(
                "direction set needs D >= 1 and K >= 1".into(),
            ));
        }
        for (k, p) in directions.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "direction {k} has {} components, expected {dim}",
                    p.len()
                )));
            }
            if !p.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFinite(format!("direction {k}")));
            }
            if p.iter().all(|z| z.norm_sqr() == 0.0) {
                return Err(Error::InvalidArgument(format!("direction {k} has zero norm")));
            }
        }
        Ok(Self { dim, directions })
    }

    /// The `D` canonical basis vectors.
    pub fn standard_basis(dim: usize) -> Self {
        let directions = (0..dim)
            .map(|d| {
                (0..dim)
                    .map(|e| Complex64::new(if d == e { 1.0 } else { 0.0 }, 0.0))
                    .collect()
            })
            .collect();
        Self { dim, directions }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, k: usize) -> &[Complex64] {
        &self.directions[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Complex64]> {
        self.directions.iter().map(|p| p.as_slice())
    }

    /// Each direction rescaled to unit Euclidean norm.
    pub fn normalized(&self) -> Self {
        let directions = self
            .directions
            .iter()
            .map(|p| {
                let n = p.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                p.iter().map(|z| z / n).collect()
            })
            .collect();
        Self {
            dim: self.dim,
            directions,
        }
    }
}

/// `[s_k]_l = p_k^H z_l` for every direction and pixel.
pub fn project(img: &MultiChannelSlc, dirs: &DirectionSet) -> Result<Vec<SingleChannelSlc>> {
    if img.channels() != dirs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} channels, directions have D={}",
            img.channels(),
            dirs.dim()
        )));
    }
    let data = img.data();
    let (h, w) = (img.height(), img.width());
    dirs.iter()
        .map(|p| {
            let mut out = Array2::zeros((h, w));
            for (d, pd) in p.iter().enumerate() {
                let weight = pd.conj();
                let channel = data.index_axis(Axis(0), d);
                out.zip_mut_with(&channel, |acc: &mut Complex64, z| *acc += weight * z);
            }
            SingleChannelSlc::new(out)
        })
        .collect()
}

/// Column `q_k` of the Hermitian-real operator with the given sign on the
/// imaginary block: `(|p_d|^2, 2 Re(p_i conj p_j), sign * 2 Im(p_i conj p_j))`.
pub(crate) fn hermitian_column(p: &[Complex64], imag_sign: f64) -> Vec<f64> {
    let dim = p.len();
    let pairs = upper_pairs(dim);
    let mut q = Vec::with_capacity(dim * dim);
    q.extend(p.iter().map(|z| z.norm_sqr()));
    let outer: Vec<Complex64> = pairs.iter().map(|&(i, j)| p[i] * p[j].conj()).collect();
    q.extend(outer.iter().map(|m| 2.0 * m.re));
    q.extend(outer.iter().map(|m| imag_sign * 2.0 * m.im));
    q
}

/// Column `q_k = vec(p_k p_k^H)` (row-major) of the unconstrained operator.
pub(crate) fn unconstrained_column(p: &[Complex64]) -> Vec<Complex64> {
    let dim = p.len();
    let mut q = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            q.push(p[i] * p[j].conj());
        }
    }
    q
}

/// Sign of the imaginary block as written in the block form of `Q`.
const LITERAL_IMAG_SIGN: f64 = -1.0;

/// Fixed Hermitian test matrix with distinct entries, used to pin the sign
/// of the imaginary block against `p^H C p`.
fn probe_matrix(dim: usize) -> CMatrix {
    let mut c = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        c[(i, i)] = Complex64::new(3.0 + i as f64, 0.0);
        for j in i + 1..dim {
            let z = Complex64::new(0.31 * (1 + i + 2 * j) as f64, 0.57 * (1 + 2 * i + j) as f64);
            c[(i, j)] = z;
            c[(j, i)] = z.conj();
        }
    }
    c
}

fn identity_error(dirs: &DirectionSet, q: &DMatrix<f64>, c: &CMatrix) -> f64 {
    let v = vectorize_hermitian(c).expect("probe matrix is Hermitian");
    let v = DVector::from_vec(v);
    let proj = q.transpose() * v;
    let mut worst = 0.0f64;
    for (k, p) in dirs.iter().enumerate() {
        let exact = quadratic_form(c, p).expect("dimensions agree");
        worst = worst.max((proj[k] - exact).abs() / (exact.abs() + 1e-300));
    }
    worst
}

/// Real `D^2 x K` operator with the imaginary-block sign that satisfies
/// `Q^T vec(C) = p_k^H C p_k`. Returns the matrix and the sign used.
pub(crate) fn hermitian_operator_matrix(dirs: &DirectionSet) -> Result<(DMatrix<f64>, f64)> {
    let dim = dirs.dim();
    let n = dim * dim;
    let probe = probe_matrix(dim);
    for sign in [LITERAL_IMAG_SIGN, -LITERAL_IMAG_SIGN] {
        let mut q = DMatrix::zeros(n, dirs.len());
        for (k, p) in dirs.iter().enumerate() {
            q.set_column(k, &DVector::from_vec(hermitian_column(p, sign)));
        }
        if identity_error(dirs, &q, &probe) < 1e-12 {
            if sign != LITERAL_IMAG_SIGN {
                log::debug!("imaginary block of Q uses sign {sign:+}");
            }
            return Ok((q, sign));
        }
    }
    Err(Error::Invariant(
        "no sign of the imaginary block reproduces the quadratic form".into(),
    ))
}

pub(crate) fn unconstrained_operator_matrix(dirs: &DirectionSet) -> DMatrix<Complex64> {
    let n = dirs.dim() * dirs.dim();
    let mut q = DMatrix::zeros(n, dirs.len());
    for (k, p) in dirs.iter().enumerate() {
        q.set_column(k, &DVector::from_vec(unconstrained_column(p)));
    }
    q
}

/// Eigenvalues of `Q Q^H` in ascending order.
pub(crate) fn gram_spectrum(dirs: &DirectionSet, mode: Parameterization) -> Result<Vec<f64>> {
    let mut ev: Vec<f64> = match mode {
        Parameterization::HermitianReal => {
            let (q, _) = hermitian_operator_matrix(dirs)?;
            let gram = &q * q.transpose();
            gram.symmetric_eigenvalues().iter().cloned().collect()
        }
        Parameterization::ComplexUnconstrained => {
            let q = unconstrained_operator_matrix(dirs);
            let gram = &q * q.adjoint();
            gram.symmetric_eigenvalues().iter().cloned().collect()
        }
    };
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// `lambda_max / lambda_min`, or infinity for a numerically singular Gram matrix.
pub(crate) fn condition_from_spectrum(ev: &[f64]) -> f64 {
    let lmin = ev[0];
    let lmax = ev[ev.len() - 1];
    if !(lmax > 0.0) || lmin <= 1e-14 * lmax {
        f64::INFINITY
    } else {
        lmax / lmin
    }
}

/// Smallest-to-largest eigenvalue ratio below which `Q Q^H` counts as singular.
pub const INVERTIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
enum Solver {
    /// `(Q Q^T)^-1 Q`, shape `D^2 x K`.
    Real(DMatrix<f64>),
    /// `(Q Q^H)^-1 Q`, shape `D^2 x K`.
    Complex(DMatrix<Complex64>),
}

/// The matrix `Q` together with the cached least-squares solve.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    mode: Parameterization,
    dirs: DirectionSet,
    q_real: Option<DMatrix<f64>>,
    q_complex: Option<DMatrix<Complex64>>,
    imag_sign: f64,
    solver: Solver,
    condition: f64,
}

/// Builds `Q` and factors it once (QR of `Q^T`), checking invertibility of
/// the normal matrix.
pub fn build_operator(dirs: &DirectionSet, mode: Parameterization) -> Result<ProjectionOperator> {
    let dim = dirs.dim();
    let n = dim * dim;
    let k = dirs.len();
    if k < n {
        return Err(Error::RankDeficient(format!(
            "K = {k} directions cannot determine D^2 = {n} unknowns (need K >= D^2)"
        )));
    }
    let spectrum = gram_spectrum(dirs, mode)?;
    let (lmin, lmax) = (spectrum[0], spectrum[n - 1]);
    if !(lmin > INVERTIBILITY_TOL * lmax) {
        return Err(Error::RankDeficient(format!(
            "directions are degenerate: Q Q^H has eigenvalue ratio {:.3e}; \
             recovery needs at least D^2 = {n} linearly independent projection directions",
            lmin / lmax
        )));
    }
    let condition = lmax / lmin;
    match mode {
        Parameterization::HermitianReal => {
            let (q, imag_sign) = hermitian_operator_matrix(dirs)?;
            // Q^T = U R  =>  (Q Q^T)^-1 Q = R^-1 U^T
            let qr = q.transpose().qr();
            let r = qr.r();
            let solve = r
                .solve_upper_triangular(&qr.q().transpose())
                .ok_or_else(|| Error::Invariant("singular triangular factor".into()))?;
            Ok(ProjectionOperator {
                mode,
                dirs: dirs.clone(),
                q_real: Some(q),
                q_complex: None,
                imag_sign,
                solver: Solver::Real(solve),
                condition,
            })
        }
        Parameterization::ComplexUnconstrained => {
            let q = unconstrained_operator_matrix(dirs);
            // Q^H = U R  =>  (Q Q^H)^-1 Q = R^-1 U^H
            let qr = q.adjoint().qr();
            let r = qr.r();
            let solve = r
                .solve_upper_triangular(&qr.q().adjoint())
                .ok_or_else(|| Error::Invariant("singular triangular factor".into()))?;
            Ok(ProjectionOperator {
                mode,
                dirs: dirs.clone(),
                q_real: None,
                q_complex: Some(q),
                imag_sign: LITERAL_IMAG_SIGN,
                solver: Solver::Complex(solve),
                condition,
            })
        }
    }
}

impl ProjectionOperator {
    pub fn mode(&self) -> Parameterization {
        self.mode
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.dirs
    }

    pub fn dim(&self) -> usize {
        self.dirs.dim()
    }

    /// Condition number of `Q Q^H`.
    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// Sign applied to the imaginary block in Hermitian-real mode.
    pub fn imaginary_block_sign(&self) -> f64 {
        self.imag_sign
    }

    pub fn real_matrix(&self) -> Option<&DMatrix<f64>> {
        self.q_real.as_ref()
    }

    pub fn complex_matrix(&self) -> Option<&DMatrix<Complex64>> {
        self.q_complex.as_ref()
    }

    /// Predicted projection variances `Q^H vec(C)` for one covariance matrix.
    pub fn forward(&self, c: &CMatrix) -> Result<Vec<f64>> {
        if c.nrows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{}, operator has D={}",
                c.nrows(),
                c.ncols(),
                self.dim()
            )));
        }
        match (&self.q_real, &self.q_complex) {
            (Some(q), _) => {
                let v = DVector::from_vec(vectorize_hermitian(c)?);
                Ok((q.transpose() * v).iter().cloned().collect())
            }
            (None, Some(q)) => {
                let dim = self.dim();
                let v = DVector::from_fn(dim * dim, |r, _| c[(r / dim, r % dim)]);
                Ok((q.adjoint() * v).iter().map(|z| z.re).collect())
            }
            (None, None) => unreachable!("operator always holds a matrix"),
        }
    }

    /// Least-squares estimate for one pixel. In unconstrained mode the result
    /// is the raw `D x D` complex solution, Hermitian only up to noise.
    pub fn solve_pixel(&self, variances: &[f64]) -> CMatrix {
        let dim = self.dim();
        match &self.solver {
            Solver::Real(m) => {
                let c = m * DVector::from_column_slice(variances);
                crate::model::devectorize_hermitian(dim, c.as_slice())
            }
            Solver::Complex(m) => {
                let v = DVector::from_iterator(
                    variances.len(),
                    variances.iter().map(|&x| Complex64::new(x, 0.0)),
                );
                let c = m * v;
                CMatrix::from_fn(dim, dim, |i, j| c[i * dim + j])
            }
        }
    }

    fn solve_pixel_vector(&self, variances: &[f64], out: &mut [f64]) -> f64 {
        match &self.solver {
            Solver::Real(m) => {
                let c = m * DVector::from_column_slice(variances);
                out.copy_from_slice(c.as_slice());
                0.0
            }
            Solver::Complex(_) => {
                let raw = self.solve_pixel(variances);
                let asym = hermitian_asymmetry(&raw);
                let herm = (&raw + raw.adjoint()) * Complex64::new(0.5, 0.0);
                let v = vectorize_hermitian(&herm).expect("symmetrized matrix is Hermitian");
                out.copy_from_slice(&v);
                asym
            }
        }
    }
}

/// Output of [`invert_projections_detailed`].
#[derive(Debug, Clone)]
pub struct Inversion {
    pub field: CovarianceField,
    /// Per-pixel least-squares residual norm `||Q^H c - v||`, when requested.
    pub residuals: Option<Array2<f64>>,
    /// Largest `|C_ij - conj(C_ji)|` of the raw unconstrained solution before
    /// symmetrization; always 0 in Hermitian-real mode.
    pub max_asymmetry: f64,
}

/// Recovers one covariance matrix per pixel from `K` reflectivity images.
pub fn invert_projections(
    op: &ProjectionOperator,
    variances: &[ReflectivityImage],
) -> Result<CovarianceField> {
    Ok(invert_projections_detailed(op, variances, false)?.field)
}

pub fn invert_projections_detailed(
    op: &ProjectionOperator,
    variances: &[ReflectivityImage],
    with_residuals: bool,
) -> Result<Inversion> {
    let k = op.directions().len();
    if variances.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} reflectivity images for {k} directions",
            variances.len()
        )));
    }
    let (h, w) = variances[0].dim();
    for (idx, v) in variances.iter().enumerate() {
        if v.dim() != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "reflectivity image {idx} is {:?}, expected {:?}",
                v.dim(),
                (h, w)
            )));
        }
        if let Some(((r, c), _)) = v.data().indexed_iter().find(|(_, x)| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "reflectivity image {idx} at pixel ({r}, {c})"
            )));
        }
    }
    let dim = op.dim();
    let n = dim * dim;
    let mut params = vec![0.0; h * w * n];
    let rows: Vec<(f64, Vec<f64>)> = params
        .par_chunks_mut(w * n)
        .enumerate()
        .map(|(r, chunk)| {
            let mut v = vec![0.0; k];
            let mut asym = 0.0f64;
            let mut res = Vec::with_capacity(if with_residuals { w } else { 0 });
            for c in 0..w {
                for (kk, img) in variances.iter().enumerate() {
                    v[kk] = img.data()[(r, c)];
                }
                let out = &mut chunk[c * n..(c + 1) * n];
                asym = asym.max(op.solve_pixel_vector(&v, out));
                if with_residuals {
                    let m = crate::model::devectorize_hermitian(dim, out);
                    let pred = op.forward(&m).expect("dimensions agree");
                    let rn = pred
                        .iter()
                        .zip(&v)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    res.push(rn);
                }
            }
            (asym, res)
        })
        .collect();
    let max_asymmetry = rows.iter().map(|(a, _)| *a).fold(0.0, f64::max);
    let residuals = with_residuals
        .then(|| Array2::from_shape_fn((h, w), |(r, c)| rows[r].1[c]));
    let field = CovarianceField::from_pixel_major(dim, h, w, &params);
    Ok(Inversion {
        field,
        residuals,
        max_asymmetry,
    })
}

/// Exact projection variances `p_k^H C_l p_k` of a covariance field.
pub fn forward_project_field(
    op: &ProjectionOperator,
    field: &CovarianceField,
) -> Result<Vec<ReflectivityImage>> {
    if field.dim() != op.dim() {
        return Err(Error::DimensionMismatch(format!(
            "field has D={}, operator has D={}",
            field.dim(),
            op.dim()
        )));
    }
    let (h, w) = (field.height(), field.width());
    let k = op.directions().len();
    let mut planes = Array3::zeros((k, h, w));
    for r in 0..h {
        for c in 0..w {
            let v = op.forward(&field.matrix_at(r, c))?;
            for (kk, x) in v.into_iter().enumerate() {
                planes[(kk, r, c)] = x;
            }
        }
    }
    planes
        .axis_iter(Axis(0))
        .map(|p| ReflectivityImage::new(p.to_owned()))
        .collect()
}

/// Reflectivity floor for the optional positive-definiteness step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PdSetting {
    Fixed(PdEnforceParams),
    /// Floor at `1e-3` times the median estimated reflectivity.
    SceneRelative { max_coherence: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub mode: Parameterization,
    pub enforce_pd: Option<PdSetting>,
    /// Despeckle each original channel as well and use those estimates as
    /// the diagonal of the recovered matrices.
    pub substitute_reflectivities: bool,
    /// Worker threads for the independent despeckling calls.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub field: CovarianceField,
    /// Despeckled projection values below zero that were clipped before inversion.
    pub clipped_negative: usize,
    pub condition_number: f64,
    /// Fraction of pixels that pass a Cholesky factorization, when
    /// positive-definiteness enforcement ran.
    pub pd_pass_rate: Option<f64>,
}

fn despeckle_all(
    images: &[SingleChannelSlc],
    despeckler: &dyn Despeckler,
    jobs: Option<usize>,
) -> Result<Vec<ReflectivityImage>> {
    let run = || -> Result<Vec<ReflectivityImage>> {
        images
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let out = despeckler.despeckle(s)?;
                if out.dim() != s.dim() {
                    return Err(Error::Invariant(format!(
                        "despeckler '{}' changed image {k} from {:?} to {:?}",
                        despeckler.name(),
                        s.dim(),
                        out.dim()
                    )));
                }
                Ok(out)
            })
            .collect()
    };
    match jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        _ => run(),
    }
}

/// Runs project -> despeckle -> invert, with the optional reflectivity
/// substitution and positive-definiteness steps.
pub fn run_muchapro(
    img: &MultiChannelSlc,
    dirs: &DirectionSet,
    despeckler: &dyn Despeckler,
    options: &PipelineOptions,
) -> Result<PipelineOutput> {
    let op = build_operator(dirs, options.mode).map_err(|e| e.at_stage("build operator"))?;
    let projections = project(img, dirs).map_err(|e| e.at_stage("project"))?;
    let despeckled = despeckle_all(&projections, despeckler, options.jobs)
        .map_err(|e| e.at_stage("despeckle"))?;
    let mut clipped_negative = 0;
    let cleaned: Vec<ReflectivityImage> = despeckled
        .into_iter()
        .map(|v| {
            let mut data = v.into_inner();
            data.mapv_inplace(|x| {
                if x < 0.0 {
                    clipped_negative += 1;
                    0.0
                } else {
                    x
                }
            });
            ReflectivityImage::new(data)
        })
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage("despeckle"))?;
    if clipped_negative > 0 {
        log::info!("clipped {clipped_negative} negative despeckled values to 0");
    }
    let mut field = invert_projections(&op, &cleaned).map_err(|e| e.at_stage("invert"))?;

    if options.substitute_reflectivities {
        let channels: Vec<SingleChannelSlc> = (0..img.channels()).map(|d| img.channel(d)).collect();
        let refl = despeckle_all(&channels, despeckler, options.jobs)
            .map_err(|e| e.at_stage("substitute reflectivities"))?;
        let mut data = field.into_inner();
        for (d, r) in refl.iter().enumerate() {
            data.index_axis_mut(Axis(0), d)
                .assign(&r.data().mapv(|x| x.max(0.0)));
        }
        field = CovarianceField::new(img.channels(), data).map_err(|e| e.at_stage("substitute reflectivities"))?;
    }

    let mut pd_pass_rate = None;
    if let Some(setting) = options.enforce_pd {
        let params = match setting {
            PdSetting::Fixed(p) => p,
            PdSetting::SceneRelative { max_coherence } => {
                PdEnforceParams::scene_relative(&field, max_coherence)
                    .map_err(|e| e.at_stage("enforce pd"))?
            }
        };
        field = enforce_pd_field(&field, &params);
        pd_pass_rate = Some(crate::pd::pd_pass_rate(&field));
    }
    Ok(PipelineOutput {
        field,
        clipped_negative,
        condition_number: op.condition_number(),
        pd_pass_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::sample_goodman;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn psd(dim: usize, seed: u64) -> CMatrix {
        use rand::Rng;
        let mut rng = crate::sim::substream(seed, 0);
        let a = CMatrix::from_fn(dim, dim, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let m = &a * a.adjoint() + CMatrix::identity(dim, dim) * c(0.1, 0.0);
        (&m + m.adjoint()) * c(0.5, 0.0)
    }

    #[test]
    fn basis_projection_returns_channel() {
        let f = CovarianceField::constant(5, 6, &psd(3, 1)).unwrap();
        let img = sample_goodman(&f, 9).unwrap();
        let s = project(&img, &DirectionSet::standard_basis(3)).unwrap();
        for (d, sd) in s.iter().enumerate() {
            assert_eq!(*sd, img.channel(d));
        }
    }

    #[test]
    fn projection_is_linear_in_direction() {
        let f = CovarianceField::constant(4, 4, &psd(2, 2)).unwrap();
        let img = sample_goodman(&f, 1).unwrap();
        let p = vec![c(0.3, 0.4), c(-0.2, 0.9)];
        let d1 = DirectionSet::new(2, vec![p.clone()]).unwrap();
        let d2 = DirectionSet::new(2, vec![p.iter().map(|z| z * 2.5).collect()]).unwrap();
        let s1 = project(&img, &d1).unwrap();
        let s2 = project(&img, &d2).unwrap();
        for (a, b) in s1[0].data().iter().zip(s2[0].data()) {
            assert!((a * 2.5 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_dimension_mismatch() {
        let f = CovarianceField::constant(2, 2, &psd(2, 2)).unwrap();
        let img = sample_goodman(&f, 1).unwrap();
        assert!(project(&img, &DirectionSet::standard_basis(3)).is_err());
    }

    #[test]
    fn scalar_operator() {
        let dirs = DirectionSet::new(1, vec![vec![c(1.0, 0.0)]]).unwrap();
        let op = build_operator(&dirs, Parameterization::HermitianReal).unwrap();
        assert_eq!(op.real_matrix().unwrap()[(0, 0)], 1.0);
        assert_eq!(op.condition_number(), 1.0);
    }

    #[test]
    fn imaginary_block_sign_is_resolved() {
        let dirs = DirectionSet::new(
            2,
            vec![
                vec![c(1.0, 0.0), c(0.0, 0.0)],
                vec![c(0.0, 0.0), c(1.0, 0.0)],
                vec![c(1.0, 0.0), c(1.0, 0.0)],
                vec![c(1.0, 0.0), c(0.0, 1.0)],
            ],
        )
        .unwrap();
        let op = build_operator(&dirs, Parameterization::HermitianReal).unwrap();
        // with Im(C_ij), i < j, as the unknown the block carries +2 Im(p_i conj p_j)
        assert_eq!(op.imaginary_block_sign(), 1.0);
    }

    #[test]
    fn too_few_or_degenerate_directions() {
        let dirs = DirectionSet::standard_basis(2);
        match build_operator(&dirs, Parameterization::HermitianReal) {
            Err(Error::RankDeficient(msg)) => assert!(msg.contains("K >= D^2")),
            other => panic!("unexpected {other:?}"),
        }
        let same = DirectionSet::new(2, vec![vec![c(1.0, 0.0), c(0.5, 0.0)]; 4]).unwrap();
        match build_operator(&same, Parameterization::HermitianReal) {
            Err(Error::RankDeficient(msg)) => assert!(msg.contains("linearly independent")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn direction_validation() {
        assert!(DirectionSet::new(2, vec![vec![c(0.0, 0.0), c(0.0, 0.0)]]).is_err());
        assert!(DirectionSet::new(2, vec![vec![c(f64::NAN, 0.0), c(1.0, 0.0)]]).is_err());
        assert!(DirectionSet::new(2, vec![]).is_err());
        assert!(DirectionSet::new(2, vec![vec![c(1.0, 0.0)]]).is_err());
    }

    #[test]
    fn nan_variances_are_reported() {
        let dirs = DirectionSet::new(1, vec![vec![c(1.0, 0.0)]]).unwrap();
        let op = build_operator(&dirs, Parameterization::HermitianReal).unwrap();
        let mut v = Array2::from_elem((3, 3), 1.0);
        v[(2, 1)] = f64::NAN;
        // ReflectivityImage refuses NaN, so the inversion never sees one
        assert!(ReflectivityImage::new(v).is_err());
        let ok = ReflectivityImage::new(Array2::from_elem((3, 3), 2.0)).unwrap();
        let f = invert_projections(&op, &[ok]).unwrap();
        assert!(f.data().iter().all(|&x| (x - 2.0).abs() < 1e-15));
    }

    #[test]
    fn unconstrained_output_hermitian_even_under_noise() {
        use rand::Rng;
        let mut rng = crate::sim::substream(3, 1);
        let dirs: Vec<Vec<Complex64>> = (0..6)
            .map(|_| (0..2).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect())
            .collect();
        let dirs = DirectionSet::new(2, dirs).unwrap();
        let op = build_operator(&dirs, Parameterization::ComplexUnconstrained).unwrap();
        let truth = CovarianceField::constant(4, 4, &psd(2, 5)).unwrap();
        let exact = forward_project_field(&op, &truth).unwrap();
        let clean = invert_projections_detailed(&op, &exact, true).unwrap();
        assert!(clean.max_asymmetry < 1e-12);
        let noisy: Vec<ReflectivityImage> = exact
            .iter()
            .map(|v| ReflectivityImage::new(v.data().mapv(|x| x * (1.0 + 0.1 * (rng.random::<f64>() - 0.5)))).unwrap())
            .collect();
        // conj(vec(p p^H)) is the transpose permutation of vec(p p^H), so the
        // least-squares solution for real data is Hermitian up to rounding
        let inv = invert_projections_detailed(&op, &noisy, true).unwrap();
        assert!(inv.max_asymmetry < 1e-12, "{}", inv.max_asymmetry);
        assert!(inv.residuals.unwrap().iter().all(|r| *r > 0.0));
    }
}
