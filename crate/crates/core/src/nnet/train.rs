use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Normalization, StageHistory};
use super::network::{Mode, Network};
use super::optim::{mse_loss, optimizer_step, OptimizerSpec, OptimizerState};
use super::spec::{NetworkSpec, TRUNK};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOptions {
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub epochs: usize,
    /// `α` in the penalty `α²‖θ‖²`.
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
    /// Block names (`trunk`, a head name) or layer names (`block.index`).
    #[serde(default)]
    pub freeze: Vec<String>,
}

impl TrainingOptions {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Inputs with per-head targets (`batch × outputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Tensor,
    pub targets: Vec<(String, Tensor)>,
}

impl TrainingSet {
    fn resolve(&self, spec: &NetworkSpec, outputs: &[usize]) -> Result<Vec<Option<&Tensor>>> {
        if self.inputs.batch() == 0 {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let mut out = vec![None; spec.heads.len()];
        for (name, t) in &self.targets {
            let h = spec
                .head_index(name)
                .ok_or_else(|| Error::InvalidArgument(format!("targets for unknown head {name:?}")))?;
            if t.shape() != [self.inputs.batch(), outputs[h]] {
                return Err(Error::ShapeMismatch(format!(
                    "targets for {name:?} have shape {:?}, expected [{}, {}]",
                    t.shape(),
                    self.inputs.batch(),
                    outputs[h]
                )));
            }
            out[h] = Some(t);
        }
        Ok(out)
    }
}

/// Mini-batch training of `theta` in place. Heads without targets receive no
/// gradient; `frozen` entries are never updated.
#[allow(clippy::too_many_arguments)]
fn fit(
    net: &Network,
    theta: &mut [f64],
    buffers: &mut [f64],
    inputs: &Tensor,
    targets: &[Option<Tensor>],
    opts: &TrainingOptions,
    frozen: &[bool],
    stream: &RngStream,
) -> Result<Vec<f64>> {
    let j = inputs.batch();
    let mut order: Vec<usize> = (0..j).collect();
    let mut state = OptimizerState::new(&opts.optimizer, theta.len());
    let decay = opts.weight_decay * opts.weight_decay;
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        stream.substream(2 * epoch as u64).shuffle(&mut order);
        let mut dropout = stream.substream(2 * epoch as u64 + 1);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(opts.batch_size).enumerate() {
            let xb = inputs.select(chunk);
            let (outputs, cache) = net
                .forward(theta, buffers, &xb, Mode::Train, Some(&mut dropout))
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::NanLoss { epoch, batch },
                    other => other,
                })?;
            let mut loss = 0.0;
            let mut grads = Vec::with_capacity(outputs.len());
            for (out, t) in outputs.iter().zip(targets) {
                grads.push(match t {
                    Some(t) => {
                        let (v, g) = mse_loss(out, &t.select(chunk))?;
                        loss += v;
                        Some(g)
                    }
                    None => None,
                });
            }
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch });
            }
            let refs: Vec<Option<&Tensor>> = grads.iter().map(Option::as_ref).collect();
            let mut grad = net.backward(theta, buffers, &cache, &refs)?;
            if decay > 0.0 {
                for (g, t) in grad.iter_mut().zip(theta.iter()) {
                    *g += 2.0 * decay * t;
                }
            }
            optimizer_step(&opts.optimizer, &mut state, theta, &grad, Some(frozen))?;
            net.update_running_stats(&cache, buffers);
            total += loss * chunk.len() as f64;
        }
        let mean = total / j as f64;
        log::debug!("epoch {epoch}: loss {mean:.6e}");
        history.push(mean);
    }
    Ok(history)
}

fn prepare(spec: &NetworkSpec, data: &TrainingSet) -> Result<(Network, Normalization, Tensor, Vec<Option<Tensor>>)> {
    let net = Network::new(spec.clone())?;
    let outputs: Vec<usize> = (0..spec.heads.len()).map(|h| net.layout().head_outputs(h)).collect();
    let targets = data.resolve(spec, &outputs)?;
    let norm = Normalization::fit(&data.inputs, &targets, &outputs);
    let x = norm.apply_inputs(&data.inputs)?;
    let t = targets
        .iter()
        .enumerate()
        .map(|(h, t)| t.map(|t| norm.apply_targets(h, t)))
        .collect();
    Ok((net, norm, x, t))
}

/// Trains every head that has targets, together with the trunk. Inputs and
/// targets are standardized with statistics stored in the checkpoint.
pub fn train(spec: &NetworkSpec, data: &TrainingSet, opts: &TrainingOptions) -> Result<Checkpoint> {
    opts.validate()?;
    let (net, normalization, x, targets) = prepare(spec, data)?;
    let root = RngStream::new(opts.seed);
    let mut theta = net.init_params(&mut root.substream(0));
    let mut buffers = net.initial_buffers();
    let mut freeze = opts.freeze.clone();
    for (head, t) in spec.heads.iter().zip(&targets) {
        if t.is_none() {
            freeze.push(head.name.clone());
        }
    }
    let frozen = net.layout().frozen_mask(&freeze)?;
    let epoch_loss = fit(&net, &mut theta, &mut buffers, &x, &targets, opts, &frozen, &root.substream(1))?;
    Ok(Checkpoint {
        spec: spec.clone(),
        theta,
        buffers,
        normalization,
        history: vec![StageHistory {
            stage: "main".into(),
            epoch_loss,
        }],
    })
}

/// Stage one trains the trunk and head `first`; stage two trains head
/// `second` alone on the stage-one trunk features, which leaves every trunk
/// parameter and buffer bit-identical.
pub fn train_two_stage(
    spec: &NetworkSpec,
    data: &TrainingSet,
    first: &str,
    second: &str,
    stage1: &TrainingOptions,
    stage2: &TrainingOptions,
) -> Result<Checkpoint> {
    stage1.validate()?;
    stage2.validate()?;
    let (h1, h2) = match (spec.head_index(first), spec.head_index(second)) {
        (Some(a), Some(b)) if a != b => (a, b),
        _ => return Err(Error::InvalidArgument(format!("two-stage training needs distinct heads {first:?} and {second:?}"))),
    };
    let (net, normalization, x, targets) = prepare(spec, data)?;
    if targets[h1].is_none() || targets[h2].is_none() {
        return Err(Error::InvalidArgument("two-stage training needs targets for both heads".into()));
    }
    let root = RngStream::new(stage1.seed);
    let mut theta = net.init_params(&mut root.substream(0));
    let mut buffers = net.initial_buffers();
    let layout = net.layout().clone();

    let mut stage1_targets = vec![None; spec.heads.len()];
    stage1_targets[h1] = targets[h1].clone();
    let mut freeze = stage1.freeze.clone();
    freeze.extend(spec.heads.iter().enumerate().filter(|(h, _)| *h != h1).map(|(_, head)| head.name.clone()));
    let frozen = layout.frozen_mask(&freeze)?;
    let loss1 = fit(&net, &mut theta, &mut buffers, &x, &stage1_targets, stage1, &frozen, &root.substream(1))?;

    let features = net.forward_trunk(&theta, &buffers, &x, Mode::Eval)?;
    let head_net = Network::new(NetworkSpec {
        input_shape: layout.trunk_output_shape().to_vec(),
        trunk: vec![],
        heads: vec![spec.heads[h2].clone()],
    })?;
    let slots = &layout.slots[layout.heads[h2].clone()];
    let p_range = layout.param_range(&layout.heads[h2]);
    let b_range = slots.first().map_or(0, |s| s.buffers.start)..slots.last().map_or(0, |s| s.buffers.end);
    let mut head_theta = theta[p_range.clone()].to_vec();
    let mut head_buffers = buffers[b_range.clone()].to_vec();
    let head_frozen = head_net
        .layout()
        .frozen_mask(&stage2.freeze.iter().filter(|n| n.as_str() != TRUNK).cloned().collect::<Vec<_>>())?;
    let loss2 = fit(
        &head_net,
        &mut head_theta,
        &mut head_buffers,
        &features,
        &[targets[h2].clone()],
        stage2,
        &head_frozen,
        &RngStream::new(stage2.seed).substream(2),
    )?;
    theta[p_range].copy_from_slice(&head_theta);
    buffers[b_range].copy_from_slice(&head_buffers);
    Ok(Checkpoint {
        spec: spec.clone(),
        theta,
        buffers,
        normalization,
        history: vec![
            StageHistory {
                stage: first.to_string(),
                epoch_loss: loss1,
            },
            StageHistory {
                stage: second.to_string(),
                epoch_loss: loss2,
            },
        ],
    })
}
