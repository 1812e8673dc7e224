use rayon::prelude::*;

use super::config::{ExperimentConfig, ProblemConfig, GAMMA_HEAD, LAMBDA_HEAD, STOP_HEAD};
use super::dataset::{Dataset, Split};
use super::experiment::Experiment;
use super::offline::{predict_heads, Model};
use super::report::{summarize, EvaluationReport, MethodResult, ReportRow};
use crate::error::{Error, Result};
use crate::forward::GridImage;
use crate::nnet::stopping_iteration;
use crate::regparam::{estimate_noise_level_2d, k_dp, lambda_dp, lambda_gcv, lambda_upre, relative_noise_level};
use crate::solvers::TikhonovProblem;

/// `‖x − x_true‖₂ / ‖x_true‖₂`.
pub fn relative_error_l2(x: &[f64], x_true: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(x_true).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = x_true.iter().map(|v| v * v).sum();
    (num / den).sqrt()
}

/// `‖x − x_true‖₁ / ‖x_true‖₁`.
pub fn relative_error_l1(x: &[f64], x_true: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(x_true).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = x_true.iter().map(|v| v.abs()).sum();
    num / den
}

/// Network (and ELM) parameters predicted for one validation sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predicted {
    /// `λ_dnn` itself, or NaN.
    pub lambda: f64,
    pub gamma: f64,
    /// Predicted stopping iteration, before clamping to the iterate count.
    pub k: f64,
    pub lambda_elm: f64,
}

/// Parameters predicted by the network and the ELM for each observation.
pub fn predict_parameters(config: &ExperimentConfig, model: &Model, inputs: &[&[f64]]) -> Result<Vec<Predicted>> {
    let heads = predict_heads(&model.checkpoint, &config.network.input_shape, inputs)?;
    let column = |name: &str| heads.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice());
    let nan = vec![f64::NAN; inputs.len()];
    let lambda = column(LAMBDA_HEAD).unwrap_or(&nan);
    let gamma = column(GAMMA_HEAD).unwrap_or(&nan);
    let k = column(STOP_HEAD).unwrap_or(&nan);
    inputs
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let lambda_elm = match &model.baselines.elm {
                Some(elm) => 10f64.powf(elm.predict(b)?),
                None => f64::NAN,
            };
            Ok(Predicted {
                lambda: 10f64.powf(lambda[j]),
                gamma: gamma[j],
                k: if k[j].is_nan() { f64::NAN } else { stopping_iteration(k[j]) as f64 },
                lambda_elm,
            })
        })
        .collect()
}

/// Solves with every configured parameter choice on each validation sample.
/// Per-sample solver failures leave NaN entries and set the row's `failed`
/// flag.
pub fn run_online(
    config: &ExperimentConfig,
    experiment: &Experiment,
    model: &Model,
    data: &Dataset,
    pool: &rayon::ThreadPool,
) -> Result<EvaluationReport> {
    data.check_config(config)?;
    model.check_config(config)?;
    if data.split != Split::Validation {
        return Err(Error::InvalidArgument("evaluation needs the validation split".into()));
    }
    let inputs: Vec<&[f64]> = data.inputs.iter().map(Vec::as_slice).collect();
    let predicted = predict_parameters(config, model, &inputs)?;
    let rows: Vec<ReportRow> = pool.install(|| {
        (0..data.len())
            .into_par_iter()
            .map(|j| evaluate_sample(config, experiment, model, data, j, &predicted[j]))
            .collect()
    });
    let summary = summarize(&data.config_hash, config.problem.kind(), &rows, experiment.is_iterative());
    Ok(EvaluationReport { rows, summary })
}

fn record(row: &mut ReportRow, name: &str, param: f64, x: Result<Vec<f64>>, x_true: &[f64]) {
    match x {
        Ok(x) => {
            *row.method_mut(name) = MethodResult {
                param,
                err_l2: relative_error_l2(&x, x_true),
                err_l1: relative_error_l1(&x, x_true),
            }
        }
        Err(e) => {
            log::warn!("sample {}: method {name} failed: {e}", row.sample);
            row.failed = true;
        }
    }
}

fn evaluate_sample(
    config: &ExperimentConfig,
    experiment: &Experiment,
    model: &Model,
    data: &Dataset,
    j: usize,
    p: &Predicted,
) -> ReportRow {
    let (b, x_true) = (&data.inputs[j], &data.truths[j]);
    let mut row = ReportRow::new(j, data.noise[j]);
    row.gamma_true = data.gamma[j];
    row.gamma_dnn = p.gamma;
    row.failed = data.failed[j];
    if let Experiment::Diffusion { side, safety, .. } = experiment {
        evaluate_stopping(&mut row, experiment, data, j, p.k, *side, *safety);
        row.flag_suboptimal_oracle();
        return row;
    }
    let solve = |l: f64| experiment.reconstruct(b, l);
    if !data.failed[j] {
        record(&mut row, "opt", data.lambda_opt[j], solve(data.lambda_opt[j]), x_true);
    }
    record(&mut row, "dnn", p.lambda, solve(p.lambda), x_true);
    if model.baselines.elm.is_some() {
        record(&mut row, "elm", p.lambda_elm, solve(p.lambda_elm), x_true);
    }
    if let Some(l) = model.baselines.oed_lambda {
        record(&mut row, "oed", l, solve(l), x_true);
    }
    if let (ProblemConfig::Heat { .. }, Experiment::Heat { svd, .. }) = (&config.problem, experiment) {
        let search = config.search();
        match TikhonovProblem::new(svd, b) {
            Ok(problem) => {
                let sigma2 = data.noise[j];
                let rules = [
                    ("gcv", lambda_gcv(&problem, &search)),
                    ("upre", lambda_upre(&problem, sigma2, &search)),
                    ("dp", lambda_dp(&problem, sigma2, &search)),
                ];
                for (name, r) in rules {
                    match r {
                        Ok(r) => record(&mut row, name, r.value, Ok(problem.solve(r.value)), x_true),
                        Err(e) if name == "dp" => {
                            log::debug!("sample {j}: discrepancy principle has no root: {e}");
                            row.dp_failed = true;
                        }
                        Err(e) => record(&mut row, name, f64::NAN, Err(e), x_true),
                    }
                }
            }
            Err(e) => record(&mut row, "gcv", f64::NAN, Err(e), x_true),
        }
    }
    row.flag_suboptimal_oracle();
    row
}

fn evaluate_stopping(row: &mut ReportRow, experiment: &Experiment, data: &Dataset, j: usize, k_dnn: f64, side: usize, safety: f64) {
    let (b, x_true) = (&data.inputs[j], &data.truths[j]);
    let history = match experiment.iterate_history(b, x_true) {
        Ok(h) => h,
        Err(e) => {
            log::warn!("sample {j}: iteration failed: {e}");
            row.failed = true;
            return;
        }
    };
    let at = |k: usize| {
        let x = &history.iterates[k - 1];
        MethodResult {
            param: k as f64,
            err_l2: relative_error_l2(x, x_true),
            err_l1: relative_error_l1(x, x_true),
        }
    };
    let len = history.len();
    if !data.failed[j] {
        *row.method_mut("opt") = at((data.k_opt[j] as usize).clamp(1, len));
    }
    *row.method_mut("dnn") = at((k_dnn as usize).clamp(1, len));
    let level = GridImage::new(side, side, b.clone())
        .and_then(|img| estimate_noise_level_2d(&img))
        .and_then(|sigma| relative_noise_level(b, sigma))
        .and_then(|level| k_dp(&history, b, level, safety));
    match level {
        Ok(r) => {
            *row.method_mut("dp") = at(r.value as usize);
            row.dp_failed = r.dp_failed;
        }
        Err(e) => {
            log::warn!("sample {j}: discrepancy principle failed: {e}");
            row.failed = true;
        }
    }
}
