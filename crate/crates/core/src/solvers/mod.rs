//! Regularized inversion: Tikhonov, anisotropic total variation and RRGMRES.
//!
//! Weight conventions differ by design: Tikhonov penalizes `λ²‖x‖²`, total
//! variation penalizes `λ‖Dx‖₁`.

mod rrgmres;
mod tikhonov;
mod tv;

pub use rrgmres::{rrgmres, IterateHistory, ARNOLDI_BREAKDOWN_TOL};
pub use tikhonov::{tikhonov_solve, TikhonovProblem};
pub use tv::{
    conjugate_gradient, difference_operator, tv_objective, tv_solve_split_bregman, CgOutcome,
    DifferenceOperator, SplitBregmanOptions,
};
