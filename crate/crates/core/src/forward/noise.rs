use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// i.i.d. `N(0, σ²)` with `σ²` drawn per sample.
    Variance,
    /// White noise rescaled so `‖ε‖/‖b‖` equals the drawn level.
    RelativeLevel,
}

/// Per-sample noise magnitude drawn uniformly from `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    pub lo: f64,
    pub hi: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo >= 0.0 && self.lo <= self.hi && self.hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise range must satisfy 0 <= lo <= hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Returns the noisy data and the realized magnitude (`σ²` or the level).
pub fn add_noise(b_clean: &[f64], spec: &NoiseSpec, stream: &mut RngStream) -> Result<(Vec<f64>, f64)> {
    spec.validate()?;
    let value = stream.uniform(spec.lo, spec.hi);
    match spec.mode {
        NoiseMode::Variance => {
            let std = value.sqrt();
            let b = b_clean.iter().map(|v| v + stream.normal(0.0, std)).collect();
            Ok((b, value))
        }
        NoiseMode::RelativeLevel => {
            let norm_b = norm2(b_clean);
            if norm_b == 0.0 {
                return Err(Error::InvalidArgument("relative noise on a zero signal".into()));
            }
            let e: Vec<f64> = (0..b_clean.len()).map(|_| stream.normal(0.0, 1.0)).collect();
            let norm_e = norm2(&e);
            if value == 0.0 || norm_e == 0.0 {
                return Ok((b_clean.to_vec(), value));
            }
            let scale = value * norm_b / norm_e;
            let b = b_clean.iter().zip(&e).map(|(v, ei)| v + scale * ei).collect();
            Ok((b, value))
        }
    }
}
