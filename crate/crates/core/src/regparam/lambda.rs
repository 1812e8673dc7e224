use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Method, SelectionResult};
use crate::error::{Error, Result};
use crate::linalg::{norm2, sub};
use crate::scalar::{bisection_root, golden_section_min};
use crate::solvers::TikhonovProblem;

/// A search over `log₁₀λ ∈ [lo, hi]` to bracket width `tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSearch {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
}

impl Default for LogSearch {
    fn default() -> Self {
        Self {
            lo: -6.0,
            hi: 2.0,
            tol: 1e-6,
        }
    }
}

impl LogSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !(self.tol > 0.0) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid log10 search interval {self:?}")));
        }
        Ok(())
    }
}

/// Relative width within which an endpoint ties with the interior minimum.
const ENDPOINT_TIE: f64 = 1e-12;

/// Golden-section search on `t = log₁₀λ`, followed by a comparison with both
/// endpoints. Returns `(t, f(t), evaluations)`. On ties the lower endpoint is
/// preferred, then the interior point, then the upper endpoint.
pub fn log_search<F>(mut f: F, search: &LogSearch) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64) -> f64,
{
    search.validate()?;
    let inner = golden_section_min(&mut f, search.lo, search.hi, search.tol)?;
    let (mut best_t, mut best_f) = (inner.argmin, inner.value);
    let f_hi = f(search.hi);
    let f_lo = f(search.lo);
    if f_hi < best_f - ENDPOINT_TIE * best_f.abs() {
        best_t = search.hi;
        best_f = f_hi;
    }
    if f_lo <= best_f + ENDPOINT_TIE * best_f.abs() {
        best_t = search.lo;
        best_f = f_lo;
    }
    Ok((best_t, best_f, inner.evaluations + 2))
}

/// Runs a fallible objective inside [`log_search`], surfacing the first error.
fn fallible_search<F>(mut f: F, search: &LogSearch) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let out = log_search(
        |t| match f(t) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::INFINITY
            }
        },
        search,
    )?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Oracle parameter: minimizes `‖x̂(λ) − x_true‖` over `log₁₀λ`.
pub fn lambda_opt<F>(mut solve: F, x_true: &[f64], search: &LogSearch) -> Result<SelectionResult>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let (t, value, evaluations) = fallible_search(
        |t| {
            let x = solve(10f64.powf(t))?;
            if x.len() != x_true.len() {
                return Err(Error::DimensionMismatch("solution and reference lengths differ".into()));
            }
            Ok(norm2(&sub(&x, x_true)))
        },
        search,
    )?;
    Ok(SelectionResult {
        value: 10f64.powf(t),
        objective: value,
        evaluations,
        method: Method::Opt,
        dp_failed: false,
    })
}

/// Discrepancy principle: the root of `‖Ax̂(λ) − b‖² = mσ²`, bisected in
/// `log₁₀λ` until the bracket cannot shrink further.
pub fn lambda_dp(problem: &TikhonovProblem<'_>, sigma2: f64, search: &LogSearch) -> Result<SelectionResult> {
    search.validate()?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma2}")));
    }
    let target = problem.data_len() as f64 * sigma2;
    let mut evaluations = 0;
    let root = bisection_root(
        |t| {
            evaluations += 1;
            problem.residual_sq(10f64.powf(t)) - target
        },
        search.lo,
        search.hi,
        1e-15,
    )?;
    let lambda = 10f64.powf(root);
    Ok(SelectionResult {
        value: lambda,
        objective: problem.residual_sq(lambda),
        evaluations,
        method: Method::Dp,
        dp_failed: false,
    })
}

/// UPRE: minimizes `‖Ax̂(λ) − b‖² + 2σ² Σ σᵢ²/(σᵢ² + λ²)`.
pub fn lambda_upre(problem: &TikhonovProblem<'_>, sigma2: f64, search: &LogSearch) -> Result<SelectionResult> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {sigma2}")));
    }
    let (t, value, evaluations) = log_search(
        |t| {
            let l = 10f64.powf(t);
            problem.residual_sq(l) + 2.0 * sigma2 * problem.influence_trace(l)
        },
        search,
    )?;
    Ok(SelectionResult {
        value: 10f64.powf(t),
        objective: value,
        evaluations,
        method: Method::Upre,
        dp_failed: false,
    })
}

/// GCV: minimizes `m‖Ax̂(λ) − b‖² / trace(I − AZ(λ))²`.
pub fn lambda_gcv(problem: &TikhonovProblem<'_>, search: &LogSearch) -> Result<SelectionResult> {
    search.validate()?;
    // the trace term is smallest at the lower end of the interval
    if !(problem.residual_trace(10f64.powf(search.lo)) > 0.0) {
        return Err(Error::ZeroDenominator("GCV function"));
    }
    let m = problem.data_len() as f64;
    let (t, value, evaluations) = log_search(
        |t| {
            let l = 10f64.powf(t);
            let denom = problem.residual_trace(l);
            m * problem.residual_sq(l) / (denom * denom)
        },
        search,
    )?;
    Ok(SelectionResult {
        value: 10f64.powf(t),
        objective: value,
        evaluations,
        method: Method::Gcv,
        dp_failed: false,
    })
}

/// Single parameter minimizing `(1/2J) Σⱼ ‖x̂ⱼ(λ) − x_trueⱼ‖²` over a
/// training set; `solve(j, λ)` reconstructs sample `j`. Per-sample errors are
/// computed in parallel and summed in index order.
pub fn lambda_oed<F>(solve: F, truths: &[Vec<f64>], search: &LogSearch) -> Result<SelectionResult>
where
    F: Fn(usize, f64) -> Result<Vec<f64>> + Sync,
{
    if truths.is_empty() {
        return Err(Error::InvalidArgument("OED needs at least one training sample".into()));
    }
    let j = truths.len() as f64;
    let (t, value, evaluations) = fallible_search(
        |t| {
            let lambda = 10f64.powf(t);
            let errors: Vec<f64> = truths
                .par_iter()
                .enumerate()
                .map(|(idx, truth)| {
                    let x = solve(idx, lambda)?;
                    Ok(norm2(&sub(&x, truth)).powi(2))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(errors.iter().sum::<f64>() / (2.0 * j))
        },
        search,
    )?;
    Ok(SelectionResult {
        value: 10f64.powf(t),
        objective: value,
        evaluations,
        method: Method::Oed,
        dp_failed: false,
    })
}
