use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::NoiseSpec;
use crate::nnet::{NetworkSpec, TrainingOptions};
use crate::regparam::LogSearch;
use crate::solvers::SplitBregmanOptions;

pub const CONFIG_VERSION: u32 = 1;

/// Head names the pipeline reads and writes.
pub const LAMBDA_HEAD: &str = "lambda";
pub const GAMMA_HEAD: &str = "gamma";
pub const STOP_HEAD: &str = "k";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Tikhonov on the 1D inverse heat problem.
    Heat { n: usize, kappa: f64 },
    /// TV on parallel-beam projections of random phantoms.
    Tomography {
        side: usize,
        n_angles: usize,
        n_rays: usize,
        #[serde(default)]
        split_bregman: SplitBregmanOptions,
    },
    /// TV deblurring of star-shaped inclusions with random regularity `γ`.
    DeblurStar {
        side: usize,
        blur_sigma: f64,
        stencil: usize,
        gamma_lo: f64,
        gamma_hi: f64,
        #[serde(default)]
        split_bregman: SplitBregmanOptions,
    },
    /// Early-stopped RRGMRES on the backward diffusion problem.
    Diffusion {
        side: usize,
        t_final: f64,
        n_steps: usize,
        k_max: usize,
        #[serde(default = "default_safety")]
        dp_safety: f64,
        /// Multiplies bump offsets of the initial condition; `side − 1`
        /// measures them in pixel widths.
        #[serde(default = "default_length_scale")]
        init_length_scale: f64,
    },
}

fn default_length_scale() -> f64 {
    1.0
}

fn default_safety() -> f64 {
    1.01
}

impl ProblemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemConfig::Heat { .. } => "heat",
            ProblemConfig::Tomography { .. } => "tomography",
            ProblemConfig::DeblurStar { .. } => "deblur_star",
            ProblemConfig::Diffusion { .. } => "diffusion",
        }
    }

    /// Shape of one observation as the network sees it.
    pub fn input_shape(&self) -> Vec<usize> {
        match *self {
            ProblemConfig::Heat { n, .. } => vec![n],
            ProblemConfig::Tomography { n_angles, n_rays, .. } => vec![1, n_angles, n_rays],
            ProblemConfig::DeblurStar { side, .. } | ProblemConfig::Diffusion { side, .. } => vec![1, side, side],
        }
    }

    /// Default `log₁₀λ` search: wider for Tikhonov than for TV, whose solves
    /// are far more expensive.
    pub fn default_search(&self) -> LogSearch {
        match self {
            ProblemConfig::Heat { .. } => LogSearch::default(),
            _ => LogSearch {
                lo: -6.0,
                hi: 1.0,
                tol: 5e-2,
            },
        }
    }

    pub fn uses_lambda(&self) -> bool {
        !matches!(self, ProblemConfig::Diffusion { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            ProblemConfig::Heat { n, kappa } => {
                if *n < 2 || !(*kappa > 0.0) {
                    return bad(format!("heat problem needs n >= 2 and kappa > 0, got n={n}, kappa={kappa}"));
                }
            }
            ProblemConfig::Tomography {
                side,
                n_angles,
                n_rays,
                split_bregman,
            } => {
                if *side < 8 || *n_angles == 0 || *n_rays == 0 {
                    return bad("tomography needs side >= 8 and positive angle/ray counts".into());
                }
                split_bregman.validate()?;
            }
            ProblemConfig::DeblurStar {
                side,
                blur_sigma,
                stencil,
                gamma_lo,
                gamma_hi,
                split_bregman,
            } => {
                if *side < 8 || !(*blur_sigma > 0.0) || stencil.is_multiple_of(2) {
                    return bad("deblur needs side >= 8, blur_sigma > 0 and an odd stencil".into());
                }
                if !(*gamma_lo > 1.0 && gamma_lo <= gamma_hi && gamma_hi.is_finite()) {
                    return bad(format!("gamma range must satisfy 1 < lo <= hi, got [{gamma_lo}, {gamma_hi}]"));
                }
                split_bregman.validate()?;
            }
            ProblemConfig::Diffusion {
                side,
                t_final,
                n_steps,
                k_max,
                dp_safety,
                init_length_scale,
            } => {
                if *side < 8 || !(*t_final > 0.0) || *n_steps == 0 || *k_max == 0 || !(*dp_safety >= 1.0) {
                    return bad("diffusion needs side >= 8, t_final > 0, n_steps, k_max >= 1, dp_safety >= 1".into());
                }
                if !(*init_length_scale > 0.0 && init_length_scale.is_finite()) {
                    return bad(format!("init_length_scale must be positive, got {init_length_scale}"));
                }
            }
        }
        Ok(())
    }
}

/// Which learned or single-parameter baselines the offline phase fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    #[serde(default)]
    pub elm: bool,
    #[serde(default)]
    pub oed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub problem: ProblemConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub search: Option<LogSearch>,
    pub network: NetworkSpec,
    pub training: TrainingOptions,
    /// Second stage for two-headed networks (`gamma` first, then `lambda`).
    #[serde(default)]
    pub stage2: Option<TrainingOptions>,
    #[serde(default)]
    pub baselines: Baselines,
    /// Not part of the hash.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::format(path, j.to_string()),
            other => other,
        })
    }

    pub fn search(&self) -> LogSearch {
        self.search.unwrap_or_else(|| self.problem.default_search())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.train_samples == 0 || self.val_samples == 0 {
            return Err(Error::InvalidArgument("train_samples and val_samples must be at least 1".into()));
        }
        self.problem.validate()?;
        self.noise.validate()?;
        self.search().validate()?;
        self.training.validate()?;
        if let Some(s) = &self.stage2 {
            s.validate()?;
        }
        let layout = self.network.layout()?;
        let want = self.problem.input_shape();
        if self.network.input_shape.iter().product::<usize>() != want.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "network input shape {:?} does not match observations of shape {want:?}",
                self.network.input_shape
            )));
        }
        let head_width = |name: &str| self.network.head_index(name).map(|h| layout.head_outputs(h));
        let required: &[&str] = match self.problem {
            ProblemConfig::Diffusion { .. } => &[STOP_HEAD],
            ProblemConfig::DeblurStar { .. } => &[GAMMA_HEAD, LAMBDA_HEAD],
            _ => &[LAMBDA_HEAD],
        };
        for name in required {
            if head_width(name) != Some(1) {
                return Err(Error::InvalidArgument(format!(
                    "{} networks need a head {name:?} with one output",
                    self.problem.kind()
                )));
            }
        }
        if matches!(self.problem, ProblemConfig::DeblurStar { .. }) && self.stage2.is_none() {
            return Err(Error::InvalidArgument("deblur_star needs stage2 training options".into()));
        }
        if self.baselines.oed && !matches!(self.problem, ProblemConfig::Heat { .. }) {
            return Err(Error::InvalidArgument("the OED baseline is only defined for the heat problem".into()));
        }
        if self.baselines.elm && !self.problem.uses_lambda() {
            return Err(Error::InvalidArgument("the ELM baseline predicts λ and needs a λ problem".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON (sorted keys, output directory removed).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn heat_toy_json() -> String {
        r#"{
            "version": 1,
            "name": "heat-toy",
            "seed": 7,
            "problem": {"kind": "heat", "n": 20, "kappa": 1.0},
            "train_samples": 10,
            "val_samples": 5,
            "noise": {"mode": "variance", "lo": 0.001, "hi": 0.1},
            "network": {"input_shape": [20], "heads": [{"name": "lambda", "layers": [
                {"type": "dense", "inputs": 20, "outputs": 4},
                {"type": "relu"},
                {"type": "linear_output", "inputs": 4, "outputs": 1}
            ]}]},
            "training": {"optimizer": {"type": "adam", "lr": 0.01}, "batch_size": 4, "epochs": 2, "seed": 1},
            "baselines": {"elm": true, "oed": true}
        }"#
        .to_string()
    }

    #[test]
    fn parses_and_hashes_stably() {
        let c = ExperimentConfig::from_json(&heat_toy_json()).unwrap();
        assert_eq!(c.hash(), ExperimentConfig::from_json(&heat_toy_json()).unwrap().hash());
        let mut d = c.clone();
        d.output = Some("elsewhere".into());
        assert_eq!(c.hash(), d.hash());
        d.seed = 8;
        assert_ne!(c.hash(), d.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let extra = heat_toy_json().replacen("\"seed\": 7,", "\"seed\": 7, \"bogus\": 1,", 1);
        assert!(ExperimentConfig::from_json(&extra).is_err());
        let v2 = heat_toy_json().replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(ExperimentConfig::from_json(&v2).is_err());
        let wrong_head = heat_toy_json().replacen("\"name\": \"lambda\"", "\"name\": \"mu\"", 1);
        assert!(ExperimentConfig::from_json(&wrong_head).is_err());
    }
}
