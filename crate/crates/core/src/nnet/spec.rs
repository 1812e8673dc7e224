use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a network. Spatial layers act on `channels × height × width`
/// samples; `dense` and `linear_output` flatten whatever they receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Relu,
    Conv2d {
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        pad: usize,
    },
    #[serde(rename = "avgpool2d")]
    AvgPool2d { k: usize },
    #[serde(rename = "maxpool2d")]
    MaxPool2d { k: usize },
    #[serde(rename = "batchnorm2d")]
    BatchNorm2d { channels: usize },
    Dropout { rate: f64 },
    LinearOutput { inputs: usize, outputs: usize },
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs, bias } => inputs * outputs + if bias { outputs } else { 0 },
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                ..
            } => out_channels * in_channels * kernel_h * kernel_w + out_channels,
            LayerSpec::BatchNorm2d { channels } => 2 * channels,
            LayerSpec::LinearOutput { inputs, outputs } => inputs * outputs,
            _ => 0,
        }
    }

    /// Running mean and variance of batch normalization.
    pub fn buffer_count(&self) -> usize {
        match *self {
            LayerSpec::BatchNorm2d { channels } => 2 * channels,
            _ => 0,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let flat: usize = input.iter().product();
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::ShapeMismatch(format!("{what} needs a channels x height x width input, got {input:?}"))),
            }
        };
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } | LayerSpec::LinearOutput { inputs, outputs } => {
                if flat != inputs {
                    return Err(Error::ShapeMismatch(format!("layer expects {inputs} inputs, got {input:?}")));
                }
                if outputs == 0 {
                    return Err(Error::InvalidArgument("layer with zero outputs".into()));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                pad,
            } => {
                let (c, h, w) = spatial("conv2d")?;
                if c != in_channels {
                    return Err(Error::ShapeMismatch(format!("conv2d expects {in_channels} channels, got {c}")));
                }
                if kernel_h == 0 || kernel_w == 0 || out_channels == 0 || h + 2 * pad < kernel_h || w + 2 * pad < kernel_w {
                    return Err(Error::InvalidArgument(format!("conv2d kernel does not fit input {input:?}")));
                }
                Ok(vec![out_channels, h + 2 * pad + 1 - kernel_h, w + 2 * pad + 1 - kernel_w])
            }
            LayerSpec::AvgPool2d { k } | LayerSpec::MaxPool2d { k } => {
                let (c, h, w) = spatial("pooling")?;
                if k == 0 || h < k || w < k {
                    return Err(Error::InvalidArgument(format!("pool size {k} does not fit input {input:?}")));
                }
                Ok(vec![c, h / k, w / k])
            }
            LayerSpec::BatchNorm2d { channels } => {
                let (c, _, _) = spatial("batchnorm2d")?;
                if c != channels {
                    return Err(Error::ShapeMismatch(format!("batchnorm2d expects {channels} channels, got {c}")));
                }
                Ok(input.to_vec())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    Continuous,
    /// Outputs are rounded to an iteration count `≥ 1` at prediction time.
    StoppingIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub name: String,
    #[serde(default)]
    pub kind: HeadKind,
    pub layers: Vec<LayerSpec>,
}

/// A shared trunk followed by named heads, each fed the trunk output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Shape of one sample: `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    #[serde(default)]
    pub trunk: Vec<LayerSpec>,
    pub heads: Vec<HeadSpec>,
}

pub const TRUNK: &str = "trunk";

/// Where a layer lives in the network and in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlot {
    pub block: String,
    pub position: usize,
    pub layer: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub params: Range<usize>,
    pub buffers: Range<usize>,
}

impl LayerSlot {
    /// `block.position`, the name used by freeze sets.
    pub fn name(&self) -> String {
        format!("{}.{}", self.block, self.position)
    }
}

/// Resolved shapes and parameter offsets. Trunk parameters come first, then
/// each head's in declaration order, so every block is one contiguous range.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub slots: Vec<LayerSlot>,
    pub trunk: Range<usize>,
    pub heads: Vec<Range<usize>>,
    pub param_count: usize,
    pub buffer_count: usize,
}

impl NetworkSpec {
    /// Plain multilayer perceptron: ReLU after every hidden dense layer and a
    /// bias-free linear output.
    pub fn mlp(widths: &[usize], head: &str) -> Self {
        let n = widths.len();
        let mut layers = Vec::new();
        for w in widths.windows(2).take(n.saturating_sub(2)) {
            layers.push(LayerSpec::Dense {
                inputs: w[0],
                outputs: w[1],
                bias: true,
            });
            layers.push(LayerSpec::Relu);
        }
        if n >= 2 {
            layers.push(LayerSpec::LinearOutput {
                inputs: widths[n - 2],
                outputs: widths[n - 1],
            });
        }
        Self {
            input_shape: vec![widths.first().copied().unwrap_or(0)],
            trunk: Vec::new(),
            heads: vec![HeadSpec {
                name: head.to_string(),
                kind: HeadKind::Continuous,
                layers,
            }],
        }
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    pub fn layout(&self) -> Result<Layout> {
        if self.input_shape.is_empty() || self.input_shape.len() == 2 || self.input_shape.len() > 3 {
            return Err(Error::ShapeMismatch(format!(
                "input shape must be [features] or [channels, height, width], got {:?}",
                self.input_shape
            )));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::ShapeMismatch("input shape has a zero extent".into()));
        }
        if self.heads.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one head".into()));
        }
        let mut slots = Vec::new();
        let mut params = 0;
        let mut buffers = 0;
        let mut push_block = |block: &str, layers: &[LayerSpec], mut shape: Vec<usize>, slots: &mut Vec<LayerSlot>| {
            let start = slots.len();
            for (position, layer) in layers.iter().enumerate() {
                let out = layer.output_shape(&shape)?;
                let p = layer.param_count();
                let b = layer.buffer_count();
                slots.push(LayerSlot {
                    block: block.to_string(),
                    position,
                    layer: layer.clone(),
                    in_shape: shape,
                    out_shape: out.clone(),
                    params: params..params + p,
                    buffers: buffers..buffers + b,
                });
                params += p;
                buffers += b;
                shape = out;
            }
            Ok::<_, Error>((start..slots.len(), shape))
        };
        let (trunk, trunk_out) = push_block(TRUNK, &self.trunk, self.input_shape.clone(), &mut slots)?;
        let mut heads = Vec::new();
        for (i, head) in self.heads.iter().enumerate() {
            if head.name == TRUNK || self.heads[..i].iter().any(|h| h.name == head.name) {
                return Err(Error::InvalidArgument(format!("duplicate or reserved head name {:?}", head.name)));
            }
            if !matches!(head.layers.last(), Some(LayerSpec::LinearOutput { .. })) {
                return Err(Error::InvalidArgument(format!(
                    "head {:?} must end in a linear_output layer",
                    head.name
                )));
            }
            let (range, _) = push_block(&head.name, &head.layers, trunk_out.clone(), &mut slots)?;
            heads.push(range);
        }
        Ok(Layout {
            slots,
            trunk,
            heads,
            param_count: params,
            buffer_count: buffers,
        })
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.param_count)
    }
}

impl Layout {
    /// Output width of head `h`.
    pub fn head_outputs(&self, h: usize) -> usize {
        self.slots[self.heads[h].end - 1].out_shape[0]
    }

    /// Shape leaving the trunk (the input shape when the trunk is empty).
    pub fn trunk_output_shape(&self) -> &[usize] {
        &self.slots[self.heads[0].start].in_shape
    }

    /// Parameter range covered by a run of slots.
    pub fn param_range(&self, slots: &Range<usize>) -> Range<usize> {
        if slots.is_empty() {
            let at = self.slots.get(slots.start).map_or(self.param_count, |s| s.params.start);
            return at..at;
        }
        self.slots[slots.start].params.start..self.slots[slots.end - 1].params.end
    }

    /// Per-parameter mask, `true` where the owning block or layer is listed.
    pub fn frozen_mask(&self, freeze: &[String]) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.param_count];
        for name in freeze {
            let mut hit = false;
            for slot in &self.slots {
                if &slot.block == name || &slot.name() == name {
                    mask[slot.params.clone()].iter_mut().for_each(|m| *m = true);
                    hit = true;
                }
            }
            if !hit && name != TRUNK {
                return Err(Error::InvalidArgument(format!("freeze set names unknown block or layer {name:?}")));
            }
        }
        Ok(mask)
    }
}
