use std::f64::consts::{PI, TAU};

use super::{DenseOperator, OperatorKind};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::RngStream;

/// Frequency range of the two sines in a heat source.
pub const HEAT_FREQUENCY_RANGE: (f64, f64) = (1.0, 3.0);

/// `k(t) = t^{-3/2} / (2κ√π) · exp(−1 / (4κ²t))`
pub fn heat_kernel(t: f64, kappa: f64) -> f64 {
    t.powf(-1.5) / (2.0 * kappa * PI.sqrt()) * (-1.0 / (4.0 * kappa * kappa * t)).exp()
}

/// Inverse heat conduction operator: lower-triangular Toeplitz matrix from
/// midpoint quadrature of the kernel on `[0, 1]` with step `1/n`.
pub fn heat_operator(n: usize, kappa: f64) -> Result<DenseOperator> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("heat operator needs n >= 2, got {n}")));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    let h = 1.0 / n as f64;
    let diagonals: Vec<f64> = (0..n)
        .map(|d| h * heat_kernel((d as f64 + 0.5) * h, kappa))
        .collect();
    let a = DenseMatrix::from_fn(n, n, |i, j| if j <= i { diagonals[i - j] } else { 0.0 });
    Ok(DenseOperator::with_kind(a, OperatorKind::Heat))
}

/// `x(tᵢ) = sin(2πr₁tᵢ) + sin(2πr₂tᵢ) + c` on `tᵢ = i/n, i = 1..n`, with `c`
/// chosen so that the minimum over the grid is exactly zero.
pub fn heat_source_from_frequencies(n: usize, r1: f64, r2: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            (TAU * r1 * t).sin() + (TAU * r2 * t).sin()
        })
        .collect();
    let c = -raw.iter().copied().fold(f64::INFINITY, f64::min);
    raw.into_iter().map(|v| v + c).collect()
}

pub fn sample_heat_source(stream: &mut RngStream, n: usize) -> Vec<f64> {
    let (lo, hi) = HEAT_FREQUENCY_RANGE;
    let r1 = stream.uniform(lo, hi);
    let r2 = stream.uniform(lo, hi);
    heat_source_from_frequencies(n, r1, r2)
}
