#![allow(dead_code)]

use muchapro::CMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_matrix(dim: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(dim, dim, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

pub fn random_hermitian(dim: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = random_matrix(dim, rng);
    (&a + a.adjoint()) * c(0.5, 0.0)
}

/// `A A^H + 0.05 I`, symmetrized exactly.
pub fn random_psd(dim: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = random_matrix(dim, rng);
    let m = &a * a.adjoint() + CMatrix::identity(dim, dim) * c(0.05, 0.0);
    (&m + m.adjoint()) * c(0.5, 0.0)
}

pub fn random_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..dim).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
}

pub fn rel_frobenius(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm()
}
