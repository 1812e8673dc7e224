use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, lstsq, DenseMatrix};

/// Single linear output layer `wᵀb + y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ElmModel {
    pub fn predict(&self, b: &[f64]) -> Result<f64> {
        if b.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for {} weights",
                b.len(),
                self.weights.len()
            )));
        }
        Ok(dot(&self.weights, b) + self.bias)
    }
}

/// Minimum-norm least-squares solution of `[B | 1]·(w; y) = targets` with the
/// samples as rows of `inputs`.
pub fn elm_fit(inputs: &DenseMatrix, targets: &[f64]) -> Result<ElmModel> {
    let (j, m) = (inputs.rows(), inputs.cols());
    if j == 0 {
        return Err(Error::InvalidArgument("ELM needs at least one sample".into()));
    }
    if targets.len() != j {
        return Err(Error::DimensionMismatch(format!("{} targets for {j} samples", targets.len())));
    }
    let aug = DenseMatrix::from_fn(j, m + 1, |r, c| if c < m { inputs.get(r, c) } else { 1.0 });
    let mut sol = lstsq(&aug, targets)?;
    let bias = sol.pop().unwrap_or(0.0);
    Ok(ElmModel { weights: sol, bias })
}
