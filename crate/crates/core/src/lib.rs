//! Learning regularization parameters for linear inverse problems.
//!
//! The crate bundles the classical machinery (Tikhonov, total variation,
//! RRGMRES, DP/UPRE/GCV parameter rules) with a small hand-written neural
//! network library and a pipeline that trains networks to predict the
//! regularization parameter directly from observed data.

// `!(x > 0.0)` rejects NaN as well; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod forward;
pub mod linalg;
pub mod nnet;
pub mod pipeline;
pub mod regparam;
pub mod rng;
pub mod scalar;
pub mod solvers;

pub use error::{Error, Result};
