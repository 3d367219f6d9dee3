//! Choice of projection directions: exact condition number of `Q Q^H`, a
//! log-sum-exp smoothed surrogate, its gradient with respect to the
//! directions, multi-start L-BFGS with annealed smoothing, and a
//! random-direction baseline.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsParams};
use crate::model::upper_pairs;
use crate::projection::{
    condition_from_spectrum, gram_spectrum, hermitian_operator_matrix, unconstrained_column, DirectionSet,
    Parameterization,
};
use crate::sim::substream;

/// Exact `lambda_max / lambda_min` of `Q Q^H`; infinite when singular.
pub fn condition_number(dirs: &DirectionSet, mode: Parameterization) -> Result<f64> {
    Ok(condition_from_spectrum(&gram_spectrum(dirs, mode)?))
}

/// Max-subtracted `log(sum(exp(v)))`.
fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-lse(lambda / mu) / lse(-lambda / mu)` on a spectrum already normalized
/// by its mean. The ratio is only meaningful while the denominator is
/// negative; otherwise `Ok(None)`.
pub fn smoothed_condition(eigenvalues: &[f64], mu: f64) -> Result<Option<f64>> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing parameter must be positive, got {mu}")));
    }
    if eigenvalues.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    let plus = log_sum_exp(eigenvalues.iter().map(|l| l / mu));
    let minus = log_sum_exp(eigenvalues.iter().map(|l| -l / mu));
    Ok((minus < 0.0).then(|| -plus / minus))
}

/// Gradient of [`smoothed_condition`] with respect to the eigenvalues.
fn smoothed_condition_gradient(eigenvalues: &[f64], mu: f64) -> Option<(f64, Vec<f64>)> {
    let plus = log_sum_exp(eigenvalues.iter().map(|l| l / mu));
    let minus = log_sum_exp(eigenvalues.iter().map(|l| -l / mu));
    if !(minus < 0.0) {
        return None;
    }
    let value = -plus / minus;
    let grad = eigenvalues
        .iter()
        .map(|l| {
            let a = (l / mu - plus).exp();
            let b = (-l / mu - minus).exp();
            -(a * minus + plus * b) / (mu * minus * minus)
        })
        .collect();
    Some((value, grad))
}

/// Cond-number objective over unnormalized directions laid out as
/// `x[2 (k D + d)] = Re p_{k,d}`, `x[2 (k D + d) + 1] = Im p_{k,d}`. Each
/// direction is normalized to unit norm before `Q` is formed.
#[derive(Debug, Clone)]
pub struct ConditionObjective {
    dim: usize,
    count: usize,
    mode: Parameterization,
    imag_sign: f64,
}

/// A Hermitian Gram matrix and the columns of `Q`, shared between the exact
/// and smoothed evaluations.
struct Gram {
    q: DMatrix<Complex64>,
    eigen: SymmetricEigen<Complex64, nalgebra::Dyn>,
}

impl ConditionObjective {
    pub fn new(dim: usize, count: usize, mode: Parameterization) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(Error::InvalidArgument("dimension and direction count must be positive".into()));
        }
        let imag_sign = match mode {
            Parameterization::HermitianReal => {
                hermitian_operator_matrix(&DirectionSet::standard_basis(dim))?.1
            }
            Parameterization::ComplexUnconstrained => 1.0,
        };
        Ok(Self {
            dim,
            count,
            mode,
            imag_sign,
        })
    }

    pub fn len(&self) -> usize {
        2 * self.dim * self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn direction(&self, x: &[f64], k: usize) -> Vec<Complex64> {
        let o = 2 * k * self.dim;
        (0..self.dim)
            .map(|d| Complex64::new(x[o + 2 * d], x[o + 2 * d + 1]))
            .collect()
    }

    fn unit_directions(&self, x: &[f64]) -> Option<Vec<(Vec<Complex64>, f64)>> {
        (0..self.count)
            .map(|k| {
                let p = self.direction(x, k);
                let r = p.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                (r > 0.0 && r.is_finite()).then(|| (p.iter().map(|z| z / r).collect(), r))
            })
            .collect()
    }

    /// Unit-norm direction set encoded by `x`.
    pub fn directions(&self, x: &[f64]) -> Result<DirectionSet> {
        let dirs = self
            .unit_directions(x)
            .ok_or_else(|| Error::InvalidArgument("zero or non-finite direction".into()))?;
        DirectionSet::new(self.dim, dirs.into_iter().map(|(p, _)| p).collect())
    }

    pub fn encode(dirs: &DirectionSet) -> Vec<f64> {
        dirs.iter().flatten().flat_map(|z| [z.re, z.im]).collect()
    }

    fn column(&self, p: &[Complex64]) -> Vec<Complex64> {
        match self.mode {
            Parameterization::HermitianReal => {
                let dim = p.len();
                let pairs = upper_pairs(dim);
                let mut q: Vec<Complex64> = p.iter().map(|z| Complex64::new(z.norm_sqr(), 0.0)).collect();
                let outer: Vec<Complex64> = pairs.iter().map(|&(i, j)| p[i] * p[j].conj()).collect();
                q.extend(outer.iter().map(|m| Complex64::new(2.0 * m.re, 0.0)));
                q.extend(outer.iter().map(|m| Complex64::new(self.imag_sign * 2.0 * m.im, 0.0)));
                q
            }
            Parameterization::ComplexUnconstrained => unconstrained_column(p),
        }
    }

    fn gram(&self, units: &[(Vec<Complex64>, f64)]) -> Gram {
        let n = self.dim * self.dim;
        let mut q = DMatrix::<Complex64>::zeros(n, self.count);
        for (k, (p, _)) in units.iter().enumerate() {
            for (r, v) in self.column(p).into_iter().enumerate() {
                q[(r, k)] = v;
            }
        }
        let a = &q * q.adjoint();
        Gram {
            q,
            eigen: a.symmetric_eigen(),
        }
    }

    /// Exact condition number at `x` (infinite if undefined).
    pub fn exact(&self, x: &[f64]) -> f64 {
        let Some(units) = self.unit_directions(x) else {
            return f64::INFINITY;
        };
        let mut ev: Vec<f64> = self.gram(&units).eigen.eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        condition_from_spectrum(&ev)
    }

    /// Smoothed condition number at `x`, or `None` where it is undefined.
    pub fn value(&self, x: &[f64], mu: f64) -> Option<f64> {
        let units = self.unit_directions(x)?;
        let ev = normalized_spectrum(&self.gram(&units))?;
        smoothed_condition(&ev, mu).ok().flatten()
    }

    /// Smoothed condition number and its gradient with respect to `x`.
    ///
    /// With `f` a symmetric function of the spectrum and `A = Q Q^H`,
    /// `df = 2 Re sum conj(W) dQ` for `W = U diag(g) U^H Q`; each column of
    /// `dQ` is linear in `p p^H`, which turns the sum into `(B + B^H) p`.
    pub fn value_and_gradient(&self, x: &[f64], mu: f64) -> Option<(f64, Vec<f64>)> {
        let units = self.unit_directions(x)?;
        let gram = self.gram(&units);
        let raw: Vec<f64> = gram.eigen.eigenvalues.iter().cloned().collect();
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        if !(mean > 0.0) {
            return None;
        }
        let ev: Vec<f64> = raw.iter().map(|l| l / mean).collect();
        let (value, h) = smoothed_condition_gradient(&ev, mu)?;
        // chain through the normalization by the mean
        let hl = h.iter().zip(&ev).map(|(a, b)| a * b).sum::<f64>() / n;
        let g: Vec<f64> = h.iter().map(|hi| (hi - hl) / mean).collect();

        let u = &gram.eigen.eigenvectors;
        let gmat = u * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            g.len(),
            g.iter().map(|&v| Complex64::new(v, 0.0)),
        )) * u.adjoint();
        let w = gmat * &gram.q;

        let dim = self.dim;
        let pairs = upper_pairs(dim);
        let np = pairs.len();
        let mut grad = vec![0.0; self.len()];
        for (k, (p, r)) in units.iter().enumerate() {
            let mut b = DMatrix::<Complex64>::zeros(dim, dim);
            match self.mode {
                Parameterization::HermitianReal => {
                    for d in 0..dim {
                        b[(d, d)] = Complex64::new(2.0 * w[(d, k)].re, 0.0);
                    }
                    for (t, &(i, j)) in pairs.iter().enumerate() {
                        b[(i, j)] = Complex64::new(4.0 * w[(dim + t, k)].re, 4.0 * self.imag_sign * w[(dim + np + t, k)].re);
                    }
                }
                Parameterization::ComplexUnconstrained => {
                    for i in 0..dim {
                        for j in 0..dim {
                            b[(i, j)] = w[(i * dim + j, k)] * 2.0;
                        }
                    }
                }
            }
            let pv = nalgebra::DVector::from_column_slice(p);
            let gp = (&b + b.adjoint()) * &pv;
            // project out the radial component: p = x / |x|
            let radial: f64 = p.iter().zip(gp.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            for d in 0..dim {
                let gx = (gp[d] - p[d] * radial) / *r;
                grad[2 * (k * dim + d)] = gx.re;
                grad[2 * (k * dim + d) + 1] = gx.im;
            }
        }
        Some((value, grad))
    }

    /// Central finite-difference gradient, kept as a check on the analytic one.
    pub fn gradient_fd(&self, x: &[f64], mu: f64, step: f64) -> Option<Vec<f64>> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                xp[i] = x[i] + step;
                let fp = self.value(&xp, mu);
                xp[i] = x[i] - step;
                let fm = self.value(&xp, mu);
                xp[i] = x[i];
                Some((fp? - fm?) / (2.0 * step))
            })
            .collect()
    }
}

fn normalized_spectrum(gram: &Gram) -> Option<Vec<f64>> {
    let ev: Vec<f64> = gram.eigen.eigenvalues.iter().cloned().collect();
    let mean = ev.iter().sum::<f64>() / ev.len() as f64;
    (mean > 0.0).then(|| ev.iter().map(|l| l / mean).collect())
}

pub const DEFAULT_SCHEDULE: [f64; 5] = [1.0, 0.3, 0.1, 0.03, 0.01];

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedConditionParams {
    /// Strictly decreasing smoothing parameters, one L-BFGS stage each.
    pub schedule: Vec<f64>,
    pub restarts: usize,
    pub seed: u64,
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for SmoothedConditionParams {
    fn default() -> Self {
        Self {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            restarts: 100,
            seed: 0,
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-8,
        }
    }
}

impl SmoothedConditionParams {
    pub fn validate(&self) -> Result<()> {
        let schedule = &self.schedule;
        if schedule.is_empty() {
            return Err(Error::InvalidArgument("annealing schedule is empty".into()));
        }
        if schedule.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing parameters must be positive and finite: {schedule:?}"
            )));
        }
        if schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "annealing schedule must be strictly decreasing: {schedule:?}"
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("at least one restart is required".into()));
        }
        if self.memory == 0 {
            return Err(Error::InvalidArgument("L-BFGS memory must be positive".into()));
        }
        Ok(())
    }

    pub fn with_schedule(mut self, schedule: Vec<f64>) -> Result<Self> {
        self.schedule = schedule;
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub condition: f64,
    pub initial_condition: f64,
    /// L-BFGS iterations summed over the stages that ran.
    pub iterations: usize,
    /// Stages skipped because the surrogate was undefined at their start.
    pub skipped_stages: usize,
}

#[derive(Debug, Clone)]
pub struct DirectionDesign {
    pub directions: DirectionSet,
    pub condition: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartOutcome>,
}

fn random_point(len: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = substream(seed, stream);
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * std::f64::consts::FRAC_1_SQRT_2
        })
        .collect()
}

fn run_restart(
    obj: &ConditionObjective,
    params: &SmoothedConditionParams,
    index: usize,
) -> (Vec<f64>, RestartOutcome) {
    let lb = LbfgsParams {
        memory: params.memory,
        max_iterations: params.max_iterations,
        gradient_tolerance: params.gradient_tolerance,
        ..LbfgsParams::default()
    };
    let mut x = random_point(obj.len(), params.seed, index as u64);
    let initial_condition = obj.exact(&x);
    let mut best = (x.clone(), initial_condition);
    let mut iterations = 0;
    let mut skipped_stages = 0;
    for &mu in &params.schedule {
        let r = lbfgs::minimize(|y| obj.value_and_gradient(y, mu), &x, &lb);
        if r.termination == lbfgs::Termination::InvalidStart {
            skipped_stages += 1;
            continue;
        }
        iterations += r.iterations;
        // keep the iterate bounded; the objective ignores direction norms
        x = r.x;
        for k in 0..obj.count {
            let o = 2 * k * obj.dim;
            let s = x[o..o + 2 * obj.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            if s > 0.0 {
                x[o..o + 2 * obj.dim].iter_mut().for_each(|v| *v /= s);
            }
        }
        let c = obj.exact(&x);
        if c < best.1 {
            best = (x.clone(), c);
        }
    }
    (
        best.0,
        RestartOutcome {
            condition: best.1,
            initial_condition,
            iterations,
            skipped_stages,
        },
    )
}

/// Multi-start minimization of the condition number of `Q Q^H` over `count`
/// unit-norm directions in `C^dim`.
pub fn optimize_directions(
    dim: usize,
    count: usize,
    mode: Parameterization,
    params: &SmoothedConditionParams,
) -> Result<DirectionDesign> {
    if count < dim * dim {
        return Err(Error::InvalidArgument(format!(
            "need K >= D^2 = {} directions, got {count}",
            dim * dim
        )));
    }
    params.validate()?;
    let obj = ConditionObjective::new(dim, count, mode)?;
    let results: Vec<(Vec<f64>, RestartOutcome)> = (0..params.restarts)
        .into_par_iter()
        .map(|i| run_restart(&obj, params, i))
        .collect();
    // first index wins ties
    let (best_restart, (x, _)) = results
        .iter()
        .enumerate()
        .fold(None::<(usize, &(Vec<f64>, RestartOutcome))>, |acc, (i, r)| match acc {
            Some((_, b)) if b.1.condition <= r.1.condition => acc,
            _ if r.1.condition.is_finite() => Some((i, r)),
            _ => acc,
        })
        .map(|(i, r)| (i, r.clone()))
        .ok_or_else(|| {
            let fallback = obj.directions(&results[0].0).ok().map(Box::new);
            Error::OptimizationFailed {
                diagnostic: format!(
                    "all {} restarts ended with a singular Gram matrix",
                    params.restarts
                ),
                best: fallback,
            }
        })?;
    let directions = obj.directions(&x)?;
    let condition = condition_number(&directions, mode)?;
    Ok(DirectionDesign {
        directions,
        condition,
        best_restart,
        restarts: results.into_iter().map(|(_, o)| o).collect(),
    })
}

/// Condition numbers of i.i.d. standard complex Gaussian direction sets.
#[derive(Debug, Clone)]
pub struct RandomStudy {
    pub conditions: Vec<f64>,
}

impl RandomStudy {
    pub fn min(&self) -> f64 {
        self.conditions.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.conditions.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Counts over `bins` logarithmically spaced bins between the smallest
    /// and largest finite value. Infinite samples are counted separately.
    pub fn log_histogram(&self, bins: usize) -> (Vec<f64>, Vec<usize>, usize) {
        let finite: Vec<f64> = self.conditions.iter().cloned().filter(|c| c.is_finite()).collect();
        let infinite = self.conditions.len() - finite.len();
        if finite.is_empty() || bins == 0 {
            return (Vec::new(), vec![0; bins], infinite);
        }
        let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min).ln();
        let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ln();
        let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
        let edges = (0..=bins).map(|b| (lo + b as f64 * width).exp()).collect();
        let mut counts = vec![0; bins];
        for c in finite {
            let b = (((c.ln() - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        (edges, counts, infinite)
    }
}

/// Draws `trials` sets of `count` directions with i.i.d. standard complex
/// Gaussian entries (not renormalized) and records their condition numbers.
/// Trial `t` uses substream `t` of `seed`, so both modes can share draws.
pub fn random_direction_study(
    dim: usize,
    count: usize,
    mode: Parameterization,
    trials: usize,
    seed: u64,
) -> Result<RandomStudy> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let obj = ConditionObjective::new(dim, count, mode)?;
    let conditions = (0..trials)
        .into_par_iter()
        .map(|t| {
            let x = random_point(obj.len(), seed, t as u64);
            let dirs = (0..count)
                .map(|k| obj.direction(&x, k))
                .collect::<Vec<_>>();
            match DirectionSet::new(dim, dirs) {
                Ok(d) => condition_number(&d, mode),
                Err(_) => Ok(f64::INFINITY),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RandomStudy { conditions })
}
