//! Post-processing of recovered covariance matrices into positive-definite
//! form: reflectivities are floored at a thermal-noise level and pairwise
//! coherences are capped.

use ndarray::Axis;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{vectorize_hermitian, CMatrix, CovarianceField};

pub const DEFAULT_MAX_COHERENCE: f64 = 0.99;
/// Scene-relative floor: this fraction of the median estimated reflectivity.
pub const SCENE_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdEnforceParams {
    thermal_floor: f64,
    max_coherence: f64,
}

impl PdEnforceParams {
    pub fn new(thermal_floor: f64, max_coherence: f64) -> Result<Self> {
        if !(thermal_floor > 0.0) || !thermal_floor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "thermal floor must be positive, got {thermal_floor}"
            )));
        }
        if !(max_coherence > 0.0 && max_coherence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "maximum coherence must lie in (0, 1), got {max_coherence}"
            )));
        }
        Ok(Self {
            thermal_floor,
            max_coherence,
        })
    }

    /// Floor at [`SCENE_FLOOR_FRACTION`] of the median diagonal entry of `field`.
    pub fn scene_relative(field: &CovarianceField, max_coherence: f64) -> Result<Self> {
        let mut diag: Vec<f64> = (0..field.dim())
            .flat_map(|d| field.reflectivity(d).iter().cloned().collect::<Vec<_>>())
            .collect();
        diag.sort_by(|a, b| a.total_cmp(b));
        let median = diag[diag.len() / 2];
        if !(median > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "median reflectivity is {median}; pass an explicit thermal floor"
            )));
        }
        Self::new(SCENE_FLOOR_FRACTION * median, max_coherence)
    }

    pub fn thermal_floor(&self) -> f64 {
        self.thermal_floor
    }

    pub fn max_coherence(&self) -> f64 {
        self.max_coherence
    }
}

/// `|c| / sqrt(a b)`.
#[inline]
pub fn coherence(c: Complex64, a: f64, b: f64) -> f64 {
    c.norm() / (a * b).sqrt()
}

/// Scales `c` so that its coherence with diagonals `a`, `b` is at most `rho`.
fn cap_coherence(c: Complex64, a: f64, b: f64, rho: f64) -> Complex64 {
    let g = coherence(c, a, b);
    if g <= rho {
        return c;
    }
    let mut out = c * (rho / g);
    // rounding can leave the ratio one ulp above the cap
    while coherence(out, a, b) > rho {
        out *= 1.0 - f64::EPSILON;
    }
    out
}

/// Applies the floor and cap to one Hermitian matrix. Only the upper
/// triangle is read; the output is exactly Hermitian.
pub fn enforce_pd(c: &CMatrix, params: &PdEnforceParams) -> CMatrix {
    let dim = c.nrows();
    let mut out = CMatrix::zeros(dim, dim);
    for d in 0..dim {
        out[(d, d)] = Complex64::new(params.thermal_floor.max(c[(d, d)].re), 0.0);
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let z = cap_coherence(
                c[(i, j)],
                out[(i, i)].re,
                out[(j, j)].re,
                params.max_coherence,
            );
            out[(i, j)] = z;
            out[(j, i)] = z.conj();
        }
    }
    out
}

pub fn enforce_pd_field(field: &CovarianceField, params: &PdEnforceParams) -> CovarianceField {
    let dim = field.dim();
    let (h, w) = (field.height(), field.width());
    let n = dim * dim;
    let params_out: Vec<f64> = (0..h * w)
        .into_par_iter()
        .flat_map_iter(|idx| {
            let m = enforce_pd(&field.matrix_at(idx / w, idx % w), params);
            vectorize_hermitian(&m).expect("output is Hermitian by construction")
        })
        .collect();
    debug_assert_eq!(params_out.len(), n * h * w);
    CovarianceField::from_pixel_major(dim, h, w, &params_out)
}

/// True when the matrix admits a Cholesky factorization (numerically PD).
pub fn is_positive_definite(c: &CMatrix) -> bool {
    crate::model::cholesky_hermitian(c).is_some()
}

/// Fraction of pixels whose matrix passes a Cholesky factorization.
pub fn pd_pass_rate(field: &CovarianceField) -> f64 {
    let (h, w) = (field.height(), field.width());
    let passed = (0..h * w)
        .into_par_iter()
        .filter(|&idx| is_positive_definite(&field.matrix_at(idx / w, idx % w)))
        .count();
    passed as f64 / (h * w) as f64
}

/// Smallest diagonal entry of the field.
pub fn min_reflectivity(field: &CovarianceField) -> f64 {
    field
        .data()
        .axis_iter(Axis(0))
        .take(field.dim())
        .flat_map(|p| p.iter().cloned().collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn m2(a: f64, z: Complex64, b: f64) -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(a, 0.0), z, z.conj(), c(b, 0.0)])
    }

    #[test]
    fn inactive_branches_leave_matrix_unchanged() {
        let m = m2(1.0, c(0.5, 0.0), 1.0);
        let p = PdEnforceParams::new(0.01, 0.99).unwrap();
        assert_eq!(enforce_pd(&m, &p), m);
    }

    #[test]
    fn hand_traced_case() {
        // diag -> (0.01, 1); coherence 1.2 / sqrt(0.01) = 12 > 0.9
        let m = m2(-0.3, c(1.2, 0.0), 1.0);
        let p = PdEnforceParams::new(0.01, 0.9).unwrap();
        let out = enforce_pd(&m, &p);
        assert_eq!(out[(0, 0)].re, 0.01);
        assert_eq!(out[(1, 1)].re, 1.0);
        let g = coherence(out[(0, 1)], 0.01, 1.0);
        assert!((g - 0.9).abs() < 1e-15 && g <= 0.9);
        // 1.2 * 0.9 / 12 = 0.09
        assert!((out[(0, 1)].re - 0.09).abs() < 1e-15);
        assert_eq!(out[(1, 0)], out[(0, 1)].conj());
    }

    #[test]
    fn params_validation() {
        assert!(PdEnforceParams::new(0.0, 0.5).is_err());
        assert!(PdEnforceParams::new(1.0, 1.0).is_err());
        assert!(PdEnforceParams::new(1.0, 0.0).is_err());
    }

    #[test]
    fn identity_field_unchanged() {
        let f = CovarianceField::constant(4, 4, &CMatrix::identity(3, 3)).unwrap();
        let p = PdEnforceParams::new(1.0, 0.99).unwrap();
        assert_eq!(enforce_pd_field(&f, &p), f);
        assert_eq!(pd_pass_rate(&f), 1.0);
    }

    #[test]
    fn scene_relative_floor() {
        let f = CovarianceField::constant(2, 2, &(CMatrix::identity(2, 2) * c(4.0, 0.0))).unwrap();
        let p = PdEnforceParams::scene_relative(&f, 0.99).unwrap();
        assert!((p.thermal_floor() - 4e-3).abs() < 1e-18);
        let z = CovarianceField::zeros(2, 2, 2);
        assert!(PdEnforceParams::scene_relative(&z, 0.99).is_err());
    }

    proptest! {
        #[test]
        fn bounds_idempotence_and_2x2_definiteness(
            a in -2.0f64..3.0, b in -2.0f64..3.0,
            re in -5.0f64..5.0, im in -5.0f64..5.0,
            floor in 1e-4f64..1.0, rho in 0.05f64..0.999,
        ) {
            let p = PdEnforceParams::new(floor, rho).unwrap();
            let out = enforce_pd(&m2(a, c(re, im), b), &p);
            prop_assert!(out[(0, 0)].re >= floor && out[(1, 1)].re >= floor);
            prop_assert!(coherence(out[(0, 1)], out[(0, 0)].re, out[(1, 1)].re) <= rho);
            prop_assert_eq!(enforce_pd(&out, &p), out.clone());
            prop_assert!(is_positive_definite(&out));
        }
    }
}
