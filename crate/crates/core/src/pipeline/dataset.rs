use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{Draw, Experiment};
use super::tensor_io::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

const FILES: [&str; 7] = [
    "inputs.bin",
    "truths.bin",
    "noise.bin",
    "gamma.bin",
    "lambda_opt.bin",
    "k_opt.bin",
    "objective.bin",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    /// Substream of the root stream that owns this split; the two never
    /// share sample streams.
    pub fn stream_index(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

/// Parallel per-sample arrays. Labels that do not apply, and labels of
/// samples whose oracle failed, are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub config_hash: String,
    pub seed: u64,
    pub input_shape: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
    pub truths: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda_opt: Vec<f64>,
    pub k_opt: Vec<f64>,
    pub objective: Vec<f64>,
    pub failed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub split: Split,
    pub seed: u64,
    pub count: usize,
    pub input_shape: Vec<usize>,
    pub truth_len: usize,
    pub failed: Vec<usize>,
    pub files: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn failed_count(&self) -> usize {
        self.failed.iter().filter(|&&f| f).count()
    }

    /// Indices of samples usable for training.
    pub fn usable(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| !self.failed[j]).collect()
    }

    pub fn check_config(&self, config: &ExperimentConfig) -> Result<()> {
        let expected = config.hash();
        if self.config_hash != expected {
            return Err(Error::ConfigMismatch {
                expected,
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let j = self.len();
        let truth_len = self.truths.first().map_or(0, Vec::len);
        let mut shape = vec![j];
        shape.extend(&self.input_shape);
        write_tensor(&dir.join(FILES[0]), &shape, &self.inputs.concat())?;
        write_tensor(&dir.join(FILES[1]), &[j, truth_len], &self.truths.concat())?;
        for (name, values) in FILES[2..]
            .iter()
            .zip([&self.noise, &self.gamma, &self.lambda_opt, &self.k_opt, &self.objective])
        {
            write_tensor(&dir.join(name), &[j], values)?;
        }
        let mut cfg = config.clone();
        cfg.output = None;
        let manifest = Manifest {
            version: DATASET_VERSION,
            config_hash: self.config_hash.clone(),
            config: serde_json::to_value(&cfg)?,
            split: self.split,
            seed: self.seed,
            count: j,
            input_shape: self.input_shape.clone(),
            truth_len,
            failed: (0..j).filter(|&i| self.failed[i]).collect(),
            files: FILES.iter().map(|s| s.to_string()).collect(),
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.version != DATASET_VERSION {
            return Err(Error::format(&path, format!("unsupported dataset version {}", m.version)));
        }
        let j = m.count;
        let per: usize = m.input_shape.iter().product();
        let read = |name: &str, want: &[usize]| -> Result<Vec<f64>> {
            let p = dir.join(name);
            let (shape, data) = read_tensor(&p)?;
            if shape != want {
                return Err(Error::format(&p, format!("shape {shape:?}, expected {want:?}")));
            }
            Ok(data)
        };
        let mut in_shape = vec![j];
        in_shape.extend(&m.input_shape);
        let split_rows = |data: Vec<f64>, width: usize| -> Vec<Vec<f64>> {
            if width == 0 {
                vec![Vec::new(); j]
            } else {
                data.chunks_exact(width).map(<[f64]>::to_vec).collect()
            }
        };
        let inputs = split_rows(read(FILES[0], &in_shape)?, per);
        let truths = split_rows(read(FILES[1], &[j, m.truth_len])?, m.truth_len);
        let mut failed = vec![false; j];
        for &i in &m.failed {
            if i >= j {
                return Err(Error::format(&path, format!("failed index {i} out of range")));
            }
            failed[i] = true;
        }
        Ok(Dataset {
            split: m.split,
            config_hash: m.config_hash,
            seed: m.seed,
            input_shape: m.input_shape,
            inputs,
            truths,
            noise: read(FILES[2], &[j])?,
            gamma: read(FILES[3], &[j])?,
            lambda_opt: read(FILES[4], &[j])?,
            k_opt: read(FILES[5], &[j])?,
            objective: read(FILES[6], &[j])?,
            failed,
        })
    }
}

/// Stream of sample `j` in `split`; depends only on the seed, the split and `j`.
pub fn sample_stream(seed: u64, split: Split, j: usize) -> RngStream {
    RngStream::new(seed).substream(split.stream_index()).substream(j as u64)
}

struct Sample {
    draw: Draw,
    lambda_opt: f64,
    k_opt: f64,
    objective: f64,
    failed: bool,
}

/// Simulates and labels every sample of one split. Oracle failures are
/// flagged; sampling failures abort.
pub fn generate_dataset(
    config: &ExperimentConfig,
    experiment: &Experiment,
    split: Split,
    pool: &rayon::ThreadPool,
) -> Result<Dataset> {
    let count = match split {
        Split::Train => config.train_samples,
        Split::Validation => config.val_samples,
    };
    let search = config.search();
    let done = AtomicUsize::new(0);
    let step = (count / 10).max(1);
    let samples: Vec<Result<Sample>> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|j| {
                let draw = experiment.draw(&sample_stream(config.seed, split, j), &config.noise)?;
                let sample = match experiment.label(&draw, &search) {
                    Ok(l) => Sample {
                        draw,
                        lambda_opt: l.lambda_opt,
                        k_opt: l.k_opt,
                        objective: l.objective,
                        failed: false,
                    },
                    Err(e) => {
                        log::warn!("{} sample {j}: oracle failed: {e}", split.name());
                        Sample {
                            draw,
                            lambda_opt: f64::NAN,
                            k_opt: f64::NAN,
                            objective: f64::NAN,
                            failed: true,
                        }
                    }
                };
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n.is_multiple_of(step) {
                    log::info!("{}: {n}/{count} samples labelled", split.name());
                }
                Ok(sample)
            })
            .collect()
    });
    let mut ds = Dataset {
        split,
        config_hash: config.hash(),
        seed: config.seed,
        input_shape: config.problem.input_shape(),
        inputs: Vec::with_capacity(count),
        truths: Vec::with_capacity(count),
        noise: Vec::with_capacity(count),
        gamma: Vec::with_capacity(count),
        lambda_opt: Vec::with_capacity(count),
        k_opt: Vec::with_capacity(count),
        objective: Vec::with_capacity(count),
        failed: Vec::with_capacity(count),
    };
    for s in samples {
        let s = s?;
        ds.inputs.push(s.draw.b);
        ds.truths.push(s.draw.x_true);
        ds.noise.push(s.draw.noise);
        ds.gamma.push(s.draw.gamma);
        ds.lambda_opt.push(s.lambda_opt);
        ds.k_opt.push(s.k_opt);
        ds.objective.push(s.objective);
        ds.failed.push(s.failed);
    }
    if ds.failed_count() > 0 {
        log::warn!("{}: {} of {count} samples failed labelling", split.name(), ds.failed_count());
    }
    Ok(ds)
}
