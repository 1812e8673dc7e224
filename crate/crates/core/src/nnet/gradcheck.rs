use super::network::{Mode, Network};
use super::optim::mse_loss;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Denominator floor in the relative error: coordinates whose analytic and
/// numeric derivatives are both tiny compare on an absolute scale.
pub const GRADCHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub coordinates_checked: usize,
}

/// Compares [`Network::backward`] with central differences of an MSE loss
/// against random targets on `coordinates` randomly chosen parameters (all of
/// them when fewer exist). In train mode every evaluation replays the same
/// dropout mask.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    net: &Network,
    theta: &[f64],
    buffers: &[f64],
    input: &Tensor,
    mode: Mode,
    coordinates: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let root = RngStream::new(seed);
    let mut ts = root.substream(0);
    let batch = input.batch();
    let targets: Vec<Tensor> = (0..net.layout().heads.len())
        .map(|h| {
            let w = net.layout().head_outputs(h);
            Tensor::new(vec![batch, w], (0..batch * w).map(|_| ts.normal(0.0, 1.0)).collect())
        })
        .collect::<Result<_>>()?;
    let dropout = root.substream(1);
    let loss_and_grads = |th: &[f64]| -> Result<(f64, Vec<Tensor>, super::network::Cache)> {
        let mut s = dropout.clone();
        let (outs, cache) = net.forward(th, buffers, input, mode, Some(&mut s))?;
        let mut total = 0.0;
        let mut grads = Vec::new();
        for (o, t) in outs.iter().zip(&targets) {
            let (v, g) = mse_loss(o, t)?;
            total += v;
            grads.push(g);
        }
        Ok((total, grads, cache))
    };
    let (_, grads, cache) = loss_and_grads(theta)?;
    let refs: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
    let analytic = net.backward(theta, buffers, &cache, &refs)?;

    let mut indices: Vec<usize> = (0..theta.len()).collect();
    root.substream(2).shuffle(&mut indices);
    indices.truncate(coordinates.min(theta.len()));
    let mut work = theta.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_coordinate: 0,
        coordinates_checked: indices.len(),
    };
    for &i in &indices {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = loss_and_grads(&work)?.0;
        work[i] = orig - eps;
        let minus = loss_and_grads(&work)?.0;
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(GRADCHECK_FLOOR);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_coordinate = i;
        }
    }
    Ok(report)
}
