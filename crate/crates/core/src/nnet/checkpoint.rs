use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::network::{Mode, Network};
use super::spec::{HeadKind, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Affine maps applied to network inputs (`(x − shift)/scale` per feature)
/// and inverted on head outputs (`y·scale + shift` per output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_shift: Vec<Vec<f64>>,
    pub output_scale: Vec<Vec<f64>>,
}

/// Spreads below this are treated as constant features.
const MIN_SCALE: f64 = 1e-12;

fn mean_std(columns: usize, rows: usize, at: impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut shift = vec![0.0; columns];
    let mut scale = vec![0.0; columns];
    for c in 0..columns {
        let mean = (0..rows).map(|r| at(r, c)).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (at(r, c) - mean).powi(2)).sum::<f64>() / rows as f64;
        shift[c] = mean;
        scale[c] = if var.sqrt() > MIN_SCALE { var.sqrt() } else { 1.0 };
    }
    (shift, scale)
}

impl Normalization {
    pub fn identity(inputs: usize, head_outputs: &[usize]) -> Self {
        Self {
            input_shift: vec![0.0; inputs],
            input_scale: vec![1.0; inputs],
            output_shift: head_outputs.iter().map(|&n| vec![0.0; n]).collect(),
            output_scale: head_outputs.iter().map(|&n| vec![1.0; n]).collect(),
        }
    }

    /// Per-feature standardization of inputs and of every head's targets
    /// (heads without targets keep the identity map).
    pub fn fit(inputs: &Tensor, targets: &[Option<&Tensor>], head_outputs: &[usize]) -> Self {
        let (j, m) = (inputs.batch(), inputs.sample_len());
        let (input_shift, input_scale) = mean_std(m, j, |r, c| inputs.data()[r * m + c]);
        let mut out = Self::identity(m, head_outputs);
        out.input_shift = input_shift;
        out.input_scale = input_scale;
        for (h, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                let k = t.sample_len();
                let (s, c) = mean_std(k, t.batch(), |r, col| t.data()[r * k + col]);
                out.output_shift[h] = s;
                out.output_scale[h] = c;
            }
        }
        out
    }

    pub fn apply_inputs(&self, x: &Tensor) -> Result<Tensor> {
        let m = self.input_shift.len();
        if x.sample_len() != m {
            return Err(Error::ShapeMismatch(format!("input of {} features, normalization has {m}", x.sample_len())));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(m) {
            for ((v, s), c) in row.iter_mut().zip(&self.input_shift).zip(&self.input_scale) {
                *v = (*v - s) / c;
            }
        }
        Ok(out)
    }

    pub fn apply_targets(&self, head: usize, t: &Tensor) -> Tensor {
        let (shift, scale) = (&self.output_shift[head], &self.output_scale[head]);
        let mut out = t.clone();
        for row in out.data_mut().chunks_exact_mut(shift.len()) {
            for ((v, s), c) in row.iter_mut().zip(shift).zip(scale) {
                *v = (*v - s) / c;
            }
        }
        out
    }

    pub fn invert_outputs(&self, head: usize, y: &mut Tensor) {
        let (shift, scale) = (&self.output_shift[head], &self.output_scale[head]);
        for row in y.data_mut().chunks_exact_mut(shift.len()) {
            for ((v, s), c) in row.iter_mut().zip(shift).zip(scale) {
                *v = *v * c + s;
            }
        }
    }
}

/// Mean training loss per epoch for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageHistory {
    pub stage: String,
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub theta: Vec<f64>,
    pub buffers: Vec<f64>,
    pub normalization: Normalization,
    pub history: Vec<StageHistory>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    spec: NetworkSpec,
    normalization: Normalization,
    history: Vec<StageHistory>,
    /// base64 of little-endian f64 values
    theta: String,
    buffers: String,
}

const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub(crate) fn decode_f64s(text: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} bytes is not a whole number of f64 values", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Raw outputs of one head after undoing target normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub head: String,
    pub raw: Tensor,
    /// Rounded iteration counts for stopping-iteration heads.
    pub iterations: Option<Vec<usize>>,
}

/// Nearest integer, never below 1.
pub fn stopping_iteration(raw: f64) -> usize {
    if raw.is_nan() || raw < 1.0 {
        1
    } else {
        raw.round() as usize
    }
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        let net = Network::new(self.spec.clone())?;
        if net.param_count() != self.theta.len() || net.layout().buffer_count != self.buffers.len() {
            return Err(Error::ShapeMismatch("checkpoint parameters do not match its network".into()));
        }
        Ok(net)
    }

    /// Eval-mode forward pass with the stored normalization.
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<Prediction>> {
        let net = self.network()?;
        let x = self.normalization.apply_inputs(inputs)?;
        let (outputs, _) = net.forward(&self.theta, &self.buffers, &x, Mode::Eval, None)?;
        Ok(outputs
            .into_iter()
            .enumerate()
            .map(|(h, mut raw)| {
                self.normalization.invert_outputs(h, &mut raw);
                let head = &self.spec.heads[h];
                let iterations =
                    (head.kind == HeadKind::StoppingIteration).then(|| raw.data().iter().map(|&v| stopping_iteration(v)).collect());
                Prediction {
                    head: head.name.clone(),
                    raw,
                    iterations,
                }
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            normalization: self.normalization.clone(),
            history: self.history.clone(),
            theta: encode_f64s(&self.theta),
            buffers: encode_f64s(&self.buffers),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        let bad = |reason: String| Error::Format {
            path: "<checkpoint>".into(),
            reason,
        };
        if file.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", file.version)));
        }
        let ckpt = Self {
            spec: file.spec,
            theta: decode_f64s(&file.theta).map_err(bad)?,
            buffers: decode_f64s(&file.buffers).map_err(bad)?,
            normalization: file.normalization,
            history: file.history,
        };
        ckpt.network()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { reason, .. } => Error::format(path, reason),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::spec::{HeadSpec, LayerSpec};

    fn unit_net(kind: HeadKind) -> Checkpoint {
        let spec = NetworkSpec {
            input_shape: vec![1],
            trunk: vec![],
            heads: vec![HeadSpec {
                name: "k".into(),
                kind,
                layers: vec![LayerSpec::LinearOutput { inputs: 1, outputs: 1 }],
            }],
        };
        Checkpoint {
            spec,
            theta: vec![1.0],
            buffers: vec![],
            normalization: Normalization::identity(1, &[1]),
            history: vec![],
        }
    }

    #[test]
    fn identity_prediction() {
        let c = unit_net(HeadKind::Continuous);
        let p = c.predict(&Tensor::new(vec![1, 1], vec![3.0]).unwrap()).unwrap();
        assert_eq!(p[0].raw.data(), &[3.0]);
        assert!(p[0].iterations.is_none());
    }

    #[test]
    fn stopping_rounding() {
        assert_eq!(stopping_iteration(11.6), 12);
        assert_eq!(stopping_iteration(0.2), 1);
        assert_eq!(stopping_iteration(-4.0), 1);
        let c = unit_net(HeadKind::StoppingIteration);
        let p = c.predict(&Tensor::new(vec![2, 1], vec![11.6, 0.2]).unwrap()).unwrap();
        assert_eq!(p[0].iterations.as_deref(), Some(&[12, 1][..]));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut c = unit_net(HeadKind::Continuous);
        c.theta = vec![0.1 + 0.2];
        c.normalization.input_shift = vec![std::f64::consts::PI / 7.0];
        c.history.push(StageHistory {
            stage: "main".into(),
            epoch_loss: vec![1.0 / 3.0, 2e-300],
        });
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back.theta[0].to_bits(), c.theta[0].to_bits());
        assert_eq!(back, c);
    }
}
