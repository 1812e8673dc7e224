use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ProblemConfig, GAMMA_HEAD, LAMBDA_HEAD, STOP_HEAD};
use super::dataset::Dataset;
use super::experiment::Experiment;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nnet::{elm_fit, train, train_two_stage, Checkpoint, ElmModel, Tensor, TrainingOptions, TrainingSet};
use crate::regparam::lambda_oed;
use crate::rng::derive_key;
use crate::solvers::TikhonovProblem;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const BASELINES_FILE: &str = "baselines.json";

/// Largest batch pushed through the network at once during prediction.
pub const PREDICT_BATCH: usize = 256;

/// Learned artifacts besides the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineModels {
    pub config_hash: String,
    /// Predicts `log₁₀λ` from the raw observation.
    pub elm: Option<ElmModel>,
    pub oed_lambda: Option<f64>,
    /// Samples left out because their oracle failed.
    pub excluded_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub checkpoint: Checkpoint,
    pub baselines: BaselineModels,
}

impl Model {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
        let path = dir.join(BASELINES_FILE);
        let text = serde_json::to_string_pretty(&self.baselines)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let checkpoint = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        let path = dir.join(BASELINES_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let baselines = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(Self { checkpoint, baselines })
    }

    pub fn check_config(&self, config: &ExperimentConfig) -> Result<()> {
        let expected = config.hash();
        if self.baselines.config_hash != expected {
            return Err(Error::ConfigMismatch {
                expected,
                found: self.baselines.config_hash.clone(),
            });
        }
        Ok(())
    }
}

/// Training options with the seed tied to the experiment seed, so that a
/// seed override changes the initialization as well as the data.
pub fn effective_options(config: &ExperimentConfig, opts: &TrainingOptions) -> TrainingOptions {
    TrainingOptions {
        seed: derive_key(config.seed, opts.seed),
        ..opts.clone()
    }
}

/// Network inputs and targets from the usable samples: `log₁₀λ_opt` for the
/// `lambda` head, `γ` for `gamma`, the raw `k_opt` for `k`.
pub fn training_set(config: &ExperimentConfig, data: &Dataset) -> Result<TrainingSet> {
    let usable = data.usable();
    if usable.is_empty() {
        return Err(Error::InvalidArgument("no usable training samples".into()));
    }
    let rows: Vec<&[f64]> = usable.iter().map(|&j| data.inputs[j].as_slice()).collect();
    let inputs = Tensor::stack(&config.network.input_shape, &rows)?;
    let column = |values: &[f64], f: fn(f64) -> f64| -> Result<Tensor> {
        Tensor::new(vec![usable.len(), 1], usable.iter().map(|&j| f(values[j])).collect())
    };
    let mut targets = Vec::new();
    match config.problem {
        ProblemConfig::Diffusion { .. } => targets.push((STOP_HEAD.to_string(), column(&data.k_opt, |k| k)?)),
        ProblemConfig::DeblurStar { .. } => {
            targets.push((GAMMA_HEAD.to_string(), column(&data.gamma, |g| g)?));
            targets.push((LAMBDA_HEAD.to_string(), column(&data.lambda_opt, f64::log10)?));
        }
        _ => targets.push((LAMBDA_HEAD.to_string(), column(&data.lambda_opt, f64::log10)?)),
    }
    Ok(TrainingSet { inputs, targets })
}

/// Trains the network and fits the configured baselines on the training split.
pub fn run_offline(
    config: &ExperimentConfig,
    experiment: &Experiment,
    data: &Dataset,
    pool: &rayon::ThreadPool,
) -> Result<Model> {
    data.check_config(config)?;
    let set = training_set(config, data)?;
    let stage1 = effective_options(config, &config.training);
    log::info!("training on {} samples ({} excluded)", set.inputs.batch(), data.failed_count());
    let checkpoint = match (&config.problem, &config.stage2) {
        (ProblemConfig::DeblurStar { .. }, Some(s2)) => {
            let stage2 = effective_options(config, s2);
            train_two_stage(&config.network, &set, GAMMA_HEAD, LAMBDA_HEAD, &stage1, &stage2)?
        }
        _ => train(&config.network, &set, &stage1)?,
    };
    for stage in &checkpoint.history {
        if let Some(last) = stage.epoch_loss.last() {
            log::info!("stage {}: final epoch loss {last:.6e}", stage.stage);
        }
    }

    let usable = data.usable();
    let elm = if config.baselines.elm {
        let rows: Vec<&[f64]> = usable.iter().map(|&j| data.inputs[j].as_slice()).collect();
        let targets: Vec<f64> = usable.iter().map(|&j| data.lambda_opt[j].log10()).collect();
        let model = elm_fit(&DenseMatrix::from_rows(&rows)?, &targets)?;
        log::info!("fitted ELM on {} samples", rows.len());
        Some(model)
    } else {
        None
    };

    let oed_lambda = if config.baselines.oed {
        let Experiment::Heat { svd, .. } = experiment else {
            return Err(Error::InvalidArgument("the OED baseline needs the heat problem".into()));
        };
        let problems = pool.install(|| {
            usable
                .par_iter()
                .map(|&j| TikhonovProblem::new(svd, &data.inputs[j]))
                .collect::<Result<Vec<_>>>()
        })?;
        let truths: Vec<Vec<f64>> = usable.iter().map(|&j| data.truths[j].clone()).collect();
        let r = pool.install(|| lambda_oed(|j, l| Ok(problems[j].solve(l)), &truths, &config.search()))?;
        log::info!("λ_oed = {:.6e}", r.value);
        Some(r.value)
    } else {
        None
    };

    Ok(Model {
        checkpoint,
        baselines: BaselineModels {
            config_hash: config.hash(),
            elm,
            oed_lambda,
            excluded_samples: data.failed_count(),
        },
    })
}

/// Network outputs for each head, one value per observation, computed in
/// fixed-size batches.
pub fn predict_heads(checkpoint: &Checkpoint, sample_shape: &[usize], inputs: &[&[f64]]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = checkpoint.spec.heads.iter().map(|h| (h.name.clone(), Vec::new())).collect();
    for chunk in inputs.chunks(PREDICT_BATCH) {
        let x = Tensor::stack(sample_shape, chunk)?;
        for (h, p) in checkpoint.predict(&x)?.into_iter().enumerate() {
            if p.raw.sample_len() != 1 {
                return Err(Error::ShapeMismatch(format!("head {:?} must have one output", p.head)));
            }
            out[h].1.extend_from_slice(p.raw.data());
        }
    }
    Ok(out)
}
