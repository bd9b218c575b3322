//! Shared helpers for unit tests.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::tensor::ComplexTensor3;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_complex(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| random_complex(rng))
}

pub fn random_vector(rng: &mut impl Rng, len: usize) -> ComplexVector {
    ComplexVector::from_fn(len, |_, _| random_complex(rng))
}

pub fn random_tensor(rng: &mut impl Rng, dims: [usize; 3]) -> ComplexTensor3 {
    ComplexTensor3::from_fn(dims, |_, _, _| random_complex(rng))
}

#[track_caller]
pub fn assert_close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    let err = (a - b).norm();
    let scale = b.norm().max(1.0);
    assert!(
        err <= tol * scale,
        "matrices differ by {err:e} (tol {tol:e}, scale {scale:e})"
    );
}
