//! Parameter-choice rules for Tikhonov `λ` and for the stopping iteration of
//! iterative methods, plus the oracle (`x_true`-aware) optima used as labels.

mod lambda;
mod noise;
mod stopping;

use serde::{Deserialize, Serialize};

pub use lambda::{lambda_dp, lambda_gcv, lambda_oed, lambda_opt, lambda_upre, log_search, LogSearch};
pub use noise::{estimate_noise_level, estimate_noise_level_2d, median, relative_noise_level};
pub use stopping::{k_dp, k_dp_from_residuals, k_opt, k_opt_from_errors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Opt,
    Dp,
    Upre,
    Gcv,
    Oed,
    Kopt,
    Kdp,
}

/// Outcome of a parameter choice. `value` is `λ` itself (not its logarithm)
/// or a 1-based iteration count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionResult {
    pub value: f64,
    pub objective: f64,
    pub evaluations: usize,
    pub method: Method,
    /// Set by [`k_dp`] when no iterate met the discrepancy threshold.
    pub dp_failed: bool,
}
