use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `(1/2J) Σⱼ ‖predⱼ − targetⱼ‖²` and its gradient `(pred − target)/J`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let j = pred.batch() as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * j);
    let grad = Tensor::new(pred.shape().to_vec(), diff.into_iter().map(|d| d / j).collect())?;
    Ok((value, grad))
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    SgdMomentum { lr: f64, momentum: f64 },
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            OptimizerSpec::SgdMomentum { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Adam { m: Vec<f64>, v: Vec<f64>, step: u64 },
    SgdMomentum { velocity: Vec<f64> },
}

impl OptimizerState {
    pub fn new(spec: &OptimizerSpec, len: usize) -> Self {
        match spec {
            OptimizerSpec::Adam { .. } => OptimizerState::Adam {
                m: vec![0.0; len],
                v: vec![0.0; len],
                step: 0,
            },
            OptimizerSpec::SgdMomentum { .. } => OptimizerState::SgdMomentum { velocity: vec![0.0; len] },
        }
    }
}

/// One update of `theta`; entries with `frozen[i]` keep their value and state.
pub fn optimizer_step(
    spec: &OptimizerSpec,
    state: &mut OptimizerState,
    theta: &mut [f64],
    grad: &[f64],
    frozen: Option<&[bool]>,
) -> Result<()> {
    if grad.len() != theta.len() || frozen.is_some_and(|f| f.len() != theta.len()) {
        return Err(Error::ShapeMismatch("gradient, parameters and freeze mask differ in length".into()));
    }
    let live = |i: usize| frozen.is_none_or(|f| !f[i]);
    match (spec, state) {
        (&OptimizerSpec::Adam { lr, beta1, beta2, eps }, OptimizerState::Adam { m, v, step }) => {
            if m.len() != theta.len() {
                return Err(Error::ShapeMismatch("optimizer state length".into()));
            }
            *step += 1;
            let c1 = 1.0 - beta1.powi(*step as i32);
            let c2 = 1.0 - beta2.powi(*step as i32);
            for i in 0..theta.len() {
                if !live(i) {
                    continue;
                }
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        (&OptimizerSpec::SgdMomentum { lr, momentum }, OptimizerState::SgdMomentum { velocity }) => {
            if velocity.len() != theta.len() {
                return Err(Error::ShapeMismatch("optimizer state length".into()));
            }
            for i in 0..theta.len() {
                if !live(i) {
                    continue;
                }
                velocity[i] = momentum * velocity[i] - lr * grad[i];
                theta[i] += velocity[i];
            }
        }
        _ => return Err(Error::InvalidArgument("optimizer state does not match its settings".into())),
    }
    Ok(())
}
