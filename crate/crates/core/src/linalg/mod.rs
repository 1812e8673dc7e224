//! Dense linear algebra used throughout the crate.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; matrices are row-major
//! [`DenseMatrix`] values. The SVD is a one-sided Jacobi iteration, which is
//! accurate for the small, badly conditioned matrices this crate deals with.

mod matrix;
mod svd;

pub(crate) use matrix::gemm;
pub use matrix::{cholesky_solve_in_place, Cholesky, DenseMatrix};
pub use svd::{lstsq, lstsq_with_rtol, svd, SvdFactorization, LSTSQ_RTOL};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

/// Relative ℓ² distance `‖a − b‖ / ‖b‖`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm2(b);
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    if denom > 0.0 {
        diff / denom
    } else {
        diff
    }
}

/// Relative ℓ¹ distance `‖a − b‖₁ / ‖b‖₁`.
pub fn relative_error_l1(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm1(b);
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    if denom > 0.0 {
        diff / denom
    } else {
        diff
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}
