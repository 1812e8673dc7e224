//! End-to-end experiments: labelled dataset generation, offline training of
//! the parameter network and baselines, online evaluation against the oracle
//! and the classical parameter-choice rules, and the on-disk artifacts of
//! each stage.
//!
//! Output layout under the experiment's output directory:
//! `train/` and `validation/` (datasets), `model/` (checkpoint and
//! baselines), `report/` (rows and summary).

mod config;
mod dataset;
mod experiment;
mod offline;
mod online;
mod report;
mod tensor_io;

use std::path::{Path, PathBuf};

pub use config::{Baselines, ExperimentConfig, ProblemConfig, CONFIG_VERSION, GAMMA_HEAD, LAMBDA_HEAD, STOP_HEAD};
pub use dataset::{generate_dataset, sample_stream, Dataset, Manifest, Split, DATASET_VERSION, MANIFEST};
pub use experiment::{Draw, Experiment, Label};
pub use offline::{
    effective_options, predict_heads, run_offline, training_set, BaselineModels, Model, BASELINES_FILE, CHECKPOINT_FILE,
    PREDICT_BATCH,
};
pub use online::{predict_parameters, relative_error_l1, relative_error_l2, run_online, Predicted};
pub use report::{
    header, quantile, rows_from_csv, rows_to_csv, summarize, EvaluationReport, MethodResult, MethodSummary, ReportRow, Stats,
    StoppingSummary, Summary, METHODS, ROWS_FILE, STOP_ERROR_FACTOR, SUBOPTIMAL_TOL, SUMMARY_FILE,
};
pub use tensor_io::{decode_tensor, encode_tensor, read_tensor, write_tensor};

use crate::error::{Error, Result};

/// Worker pool with `threads` threads (0 = available parallelism).
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))
}

/// Artifact directories of one experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub root: PathBuf,
}

impl ArtifactPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        self.root.join(split.name())
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Generates and saves both splits.
pub fn generate_stage(config: &ExperimentConfig, paths: &ArtifactPaths, pool: &rayon::ThreadPool) -> Result<()> {
    let experiment = Experiment::build(&config.problem)?;
    for split in [Split::Train, Split::Validation] {
        let ds = generate_dataset(config, &experiment, split, pool)?;
        ds.save(&paths.dataset(split), config)?;
    }
    Ok(())
}

fn load_dataset(config: &ExperimentConfig, dir: &Path) -> Result<Dataset> {
    let ds = Dataset::load(dir)?;
    ds.check_config(config)?;
    Ok(ds)
}

pub fn train_stage(config: &ExperimentConfig, paths: &ArtifactPaths, pool: &rayon::ThreadPool) -> Result<Model> {
    let data = load_dataset(config, &paths.dataset(Split::Train))?;
    let experiment = Experiment::build(&config.problem)?;
    let model = run_offline(config, &experiment, &data, pool)?;
    model.save(&paths.model())?;
    Ok(model)
}

pub fn evaluate_stage(
    config: &ExperimentConfig,
    paths: &ArtifactPaths,
    pool: &rayon::ThreadPool,
) -> Result<EvaluationReport> {
    let data = load_dataset(config, &paths.dataset(Split::Validation))?;
    let model = Model::load(&paths.model())?;
    let experiment = Experiment::build(&config.problem)?;
    let report = run_online(config, &experiment, &model, &data, pool)?;
    report.write(&paths.report())?;
    Ok(report)
}
