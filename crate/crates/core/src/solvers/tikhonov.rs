use crate::error::{Error, Result};
use crate::linalg::{dot, SvdFactorization, LSTSQ_RTOL};

/// A Tikhonov problem `min ‖Ax − b‖² + λ²‖x‖²` in SVD coordinates.
///
/// Caches `c = Uᵀb` and the out-of-range residual `‖(I − UUᵀ)b‖²` so every
/// quantity below is `O(r)` per `λ` apart from forming `x̂` itself.
#[derive(Debug, Clone)]
pub struct TikhonovProblem<'a> {
    svd: &'a SvdFactorization,
    coeffs: Vec<f64>,
    perp_sq: f64,
}

impl<'a> TikhonovProblem<'a> {
    pub fn new(svd: &'a SvdFactorization, b: &[f64]) -> Result<Self> {
        if b.len() != svd.rows() {
            return Err(Error::DimensionMismatch(format!(
                "data of length {} for an operator with {} rows",
                b.len(),
                svd.rows()
            )));
        }
        let coeffs = svd.project(b);
        // explicit residual b − U(Uᵀb) avoids cancellation in ‖b‖² − ‖c‖²
        let mut perp = b.to_vec();
        let r = svd.rank_bound();
        for (i, p) in perp.iter_mut().enumerate() {
            let row = &svd.u.data()[i * r..(i + 1) * r];
            *p -= dot(row, &coeffs);
        }
        let perp_sq = dot(&perp, &perp);
        Ok(Self { svd, coeffs, perp_sq })
    }

    pub fn svd(&self) -> &SvdFactorization {
        self.svd
    }

    pub fn data_len(&self) -> usize {
        self.svd.rows()
    }

    /// `Uᵀb`
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `‖(I − UUᵀ)b‖²`
    pub fn out_of_range_residual(&self) -> f64 {
        self.perp_sq
    }

    /// `x̂(λ) = Σ σᵢ/(σᵢ² + λ²)·(uᵢᵀb)·vᵢ`; `λ = 0` gives the minimum-norm
    /// least-squares solution with the usual singular-value cutoff.
    pub fn solve(&self, lambda: f64) -> Vec<f64> {
        let l2 = lambda * lambda;
        let smax = self.svd.singular_values.first().copied().unwrap_or(0.0);
        let weights: Vec<f64> = self
            .svd
            .singular_values
            .iter()
            .zip(&self.coeffs)
            .map(|(&s, &c)| {
                if l2 == 0.0 {
                    if s > LSTSQ_RTOL * smax && s > 0.0 {
                        c / s
                    } else {
                        0.0
                    }
                } else {
                    s / (s * s + l2) * c
                }
            })
            .collect();
        self.svd.combine_right(&weights)
    }

    /// `‖Ax̂(λ) − b‖² = Σ [λ²/(σᵢ² + λ²)]² cᵢ² + ‖(I − UUᵀ)b‖²`
    pub fn residual_sq(&self, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        let in_range: f64 = self
            .svd
            .singular_values
            .iter()
            .zip(&self.coeffs)
            .map(|(&s, &c)| {
                let denom = s * s + l2;
                let f = if denom > 0.0 { l2 / denom } else { 1.0 };
                f * f * c * c
            })
            .sum();
        in_range + self.perp_sq
    }

    /// `trace(A Z(λ)) = Σ σᵢ²/(σᵢ² + λ²)`
    pub fn influence_trace(&self, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        self.svd
            .singular_values
            .iter()
            .map(|&s| {
                let denom = s * s + l2;
                if denom > 0.0 {
                    s * s / denom
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// `trace(I − A Z(λ)) = (m − r) + Σ λ²/(σᵢ² + λ²)`, summed without
    /// cancellation.
    pub fn residual_trace(&self, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        let m = self.svd.rows();
        let r = self.svd.rank_bound();
        let filtered: f64 = self
            .svd
            .singular_values
            .iter()
            .map(|&s| {
                let denom = s * s + l2;
                if denom > 0.0 {
                    l2 / denom
                } else {
                    1.0
                }
            })
            .sum();
        (m - r) as f64 + filtered
    }
}

/// Tikhonov solution with weight `λ²` (see [`TikhonovProblem::solve`]).
pub fn tikhonov_solve(svd: &SvdFactorization, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(TikhonovProblem::new(svd, b)?.solve(lambda))
}
