use super::layers::{self, BatchNormCache, ConvGeometry};
use super::spec::{LayerSlot, LayerSpec, Layout, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch normalization on batch statistics.
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
enum Aux {
    None,
    Argmax(Vec<usize>),
    DropMask(Vec<f64>),
    BatchNorm(BatchNormCache),
}

/// Everything [`Network::backward`] needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    fingerprint: u64,
    mode: Mode,
    batch: usize,
    inputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl Cache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// FNV-1a over the bit patterns of parameters and buffers.
fn fingerprint(theta: &[f64], buffers: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in theta.iter().chain(buffers) {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ (theta.len() as u64) << 32 ^ buffers.len() as u64
}

/// A validated [`NetworkSpec`] with its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layout: Layout,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let layout = spec.layout()?;
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count
    }

    /// Running means 0 and variances 1.
    pub fn initial_buffers(&self) -> Vec<f64> {
        let mut buf = vec![0.0; self.layout.buffer_count];
        for slot in &self.layout.slots {
            if let LayerSpec::BatchNorm2d { channels } = slot.layer {
                buf[slot.buffers.start + channels..slot.buffers.end].fill(1.0);
            }
        }
        buf
    }

    /// He-normal weights for layers followed by ReLU, variance `1/fan_in` for
    /// the output layer, zero biases, unit batch-norm scales.
    pub fn init_params(&self, stream: &mut RngStream) -> Vec<f64> {
        let mut theta = vec![0.0; self.layout.param_count];
        for slot in &self.layout.slots {
            let p = &mut theta[slot.params.clone()];
            match slot.layer {
                LayerSpec::Dense { inputs, outputs, .. } => {
                    let std = (2.0 / inputs as f64).sqrt();
                    p[..inputs * outputs].iter_mut().for_each(|v| *v = stream.normal(0.0, std));
                }
                LayerSpec::Conv2d {
                    kernel_h,
                    kernel_w,
                    in_channels,
                    out_channels,
                    ..
                } => {
                    let fan_in = in_channels * kernel_h * kernel_w;
                    let std = (2.0 / fan_in as f64).sqrt();
                    p[..out_channels * fan_in].iter_mut().for_each(|v| *v = stream.normal(0.0, std));
                }
                LayerSpec::BatchNorm2d { channels } => p[..channels].fill(1.0),
                LayerSpec::LinearOutput { inputs, .. } => {
                    let std = (1.0 / inputs as f64).sqrt();
                    p.iter_mut().for_each(|v| *v = stream.normal(0.0, std));
                }
                _ => {}
            }
        }
        theta
    }

    fn check(&self, theta: &[f64], buffers: &[f64], input: &Tensor) -> Result<()> {
        if theta.len() != self.layout.param_count {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector of length {} for a network with {}",
                theta.len(),
                self.layout.param_count
            )));
        }
        if buffers.len() != self.layout.buffer_count {
            return Err(Error::ShapeMismatch("buffer vector does not match the network".into()));
        }
        if input.shape()[1..] != self.spec.input_shape[..] && input.sample_len() != self.spec.input_shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "input of shape {:?} for per-sample shape {:?}",
                input.shape(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    /// Runs the trunk and every head. `stream` drives dropout in train mode
    /// and is required when any dropout rate is positive.
    pub fn forward(
        &self,
        theta: &[f64],
        buffers: &[f64],
        input: &Tensor,
        mode: Mode,
        mut stream: Option<&mut RngStream>,
    ) -> Result<(Vec<Tensor>, Cache)> {
        self.check(theta, buffers, input)?;
        let batch = input.batch();
        let n = self.layout.slots.len();
        let mut cache = Cache {
            fingerprint: fingerprint(theta, buffers),
            mode,
            batch,
            inputs: Vec::with_capacity(n),
            aux: Vec::with_capacity(n),
        };
        let mut x = input.data().to_vec();
        for slot in &self.layout.slots[self.layout.trunk.clone()] {
            x = self.layer_forward(slot, theta, buffers, x, batch, mode, &mut stream, &mut cache)?;
        }
        let trunk_out = x;
        let mut outputs = Vec::with_capacity(self.layout.heads.len());
        for range in &self.layout.heads {
            let mut h = trunk_out.clone();
            for slot in &self.layout.slots[range.clone()] {
                h = self.layer_forward(slot, theta, buffers, h, batch, mode, &mut stream, &mut cache)?;
            }
            let width = self.layout.slots[range.end - 1].out_shape[0];
            outputs.push(Tensor::new(vec![batch, width], h)?);
        }
        if outputs.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("network output"));
        }
        Ok((outputs, cache))
    }

    /// Trunk features only (eval or train mode), shaped `batch × trunk output`.
    pub fn forward_trunk(&self, theta: &[f64], buffers: &[f64], input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check(theta, buffers, input)?;
        let batch = input.batch();
        let mut scratch = Cache {
            fingerprint: 0,
            mode,
            batch,
            inputs: Vec::new(),
            aux: Vec::new(),
        };
        let mut x = input.data().to_vec();
        let mut none = None;
        for slot in &self.layout.slots[self.layout.trunk.clone()] {
            x = self.layer_forward(slot, theta, buffers, x, batch, mode, &mut none, &mut scratch)?;
            scratch.inputs.clear();
            scratch.aux.clear();
        }
        let per: usize = self.layout.trunk_output_shape().iter().product();
        Ok(Tensor::new(vec![batch, per], x)?.with_sample_shape(self.layout.trunk_output_shape()))
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward(
        &self,
        slot: &LayerSlot,
        theta: &[f64],
        buffers: &[f64],
        x: Vec<f64>,
        batch: usize,
        mode: Mode,
        stream: &mut Option<&mut RngStream>,
        cache: &mut Cache,
    ) -> Result<Vec<f64>> {
        let p = &theta[slot.params.clone()];
        let train = mode == Mode::Train;
        let (y, aux) = match slot.layer {
            LayerSpec::Dense { inputs, outputs, bias } => {
                let (w, b) = p.split_at(inputs * outputs);
                (layers::dense_forward(&x, batch, inputs, outputs, w, bias.then_some(b)), Aux::None)
            }
            LayerSpec::LinearOutput { inputs, outputs } => (layers::dense_forward(&x, batch, inputs, outputs, p, None), Aux::None),
            LayerSpec::Relu => (x.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(), Aux::None),
            LayerSpec::Conv2d { .. } => {
                let g = conv_geometry(slot);
                let (w, b) = p.split_at(p.len() - g.out_channels);
                (layers::conv_forward(&x, batch, &g, w, b), Aux::None)
            }
            LayerSpec::AvgPool2d { k } => (layers::pool_forward(&x, batch, &slot.in_shape, k, false).0, Aux::None),
            LayerSpec::MaxPool2d { k } => {
                let (y, arg) = layers::pool_forward(&x, batch, &slot.in_shape, k, true);
                (y, Aux::Argmax(arg))
            }
            LayerSpec::BatchNorm2d { .. } => {
                let (y, bn) = layers::batchnorm_forward(&x, batch, &slot.in_shape, p, &buffers[slot.buffers.clone()], train);
                (y, Aux::BatchNorm(bn))
            }
            LayerSpec::Dropout { rate } => {
                if !train || rate == 0.0 {
                    (x.clone(), Aux::None)
                } else {
                    let s = stream
                        .as_deref_mut()
                        .ok_or_else(|| Error::InvalidArgument("dropout in train mode needs a random stream".into()))?;
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = x.iter().map(|_| if s.next_f64() < rate { 0.0 } else { keep }).collect();
                    (x.iter().zip(&mask).map(|(a, m)| a * m).collect(), Aux::DropMask(mask))
                }
            }
        };
        cache.inputs.push(x);
        cache.aux.push(aux);
        Ok(y)
    }

    /// Gradient of `Σₕ ⟨head_gradsₕ, outputₕ⟩` with respect to `theta`. Heads
    /// given `None` contribute nothing.
    pub fn backward(&self, theta: &[f64], buffers: &[f64], cache: &Cache, head_grads: &[Option<&Tensor>]) -> Result<Vec<f64>> {
        if cache.fingerprint != fingerprint(theta, buffers) || cache.inputs.len() != self.layout.slots.len() {
            return Err(Error::StaleCache);
        }
        if head_grads.len() != self.layout.heads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} head gradients for {} heads",
                head_grads.len(),
                self.layout.heads.len()
            )));
        }
        let batch = cache.batch;
        let mut grad = vec![0.0; self.layout.param_count];
        let trunk_len: usize = self.layout.trunk_output_shape().iter().product::<usize>() * batch;
        let mut d_trunk = vec![0.0; trunk_len];
        for (h, range) in self.layout.heads.iter().enumerate() {
            let Some(g) = head_grads[h] else { continue };
            let width = self.layout.head_outputs(h);
            if g.shape() != [batch, width] {
                return Err(Error::ShapeMismatch(format!("head gradient {:?}, expected [{batch}, {width}]", g.shape())));
            }
            let mut d = g.data().to_vec();
            for i in range.clone().rev() {
                d = self.layer_backward(i, theta, cache, d, &mut grad);
            }
            for (a, b) in d_trunk.iter_mut().zip(&d) {
                *a += b;
            }
        }
        let mut d = d_trunk;
        for i in self.layout.trunk.clone().rev() {
            d = self.layer_backward(i, theta, cache, d, &mut grad);
        }
        Ok(grad)
    }

    fn layer_backward(&self, i: usize, theta: &[f64], cache: &Cache, dy: Vec<f64>, grad: &mut [f64]) -> Vec<f64> {
        let slot = &self.layout.slots[i];
        let x = &cache.inputs[i];
        let batch = cache.batch;
        let p = &theta[slot.params.clone()];
        let g = &mut grad[slot.params.clone()];
        match (&slot.layer, &cache.aux[i]) {
            (&LayerSpec::Dense { inputs, outputs, bias }, _) => {
                let (w, _) = p.split_at(inputs * outputs);
                let (gw, gb) = g.split_at_mut(inputs * outputs);
                layers::dense_backward(x, &dy, batch, inputs, outputs, w, gw, bias.then_some(gb))
            }
            (&LayerSpec::LinearOutput { inputs, outputs }, _) => layers::dense_backward(x, &dy, batch, inputs, outputs, p, g, None),
            // subgradient 0 at the kink
            (LayerSpec::Relu, _) => dy.iter().zip(x).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect(),
            (LayerSpec::Conv2d { .. }, _) => {
                let geo = conv_geometry(slot);
                let split = p.len() - geo.out_channels;
                let (gw, gb) = g.split_at_mut(split);
                layers::conv_backward(x, &dy, batch, &geo, &p[..split], gw, gb)
            }
            (&LayerSpec::AvgPool2d { k }, _) => layers::pool_backward(&dy, batch, &slot.in_shape, k, None),
            (&LayerSpec::MaxPool2d { k }, Aux::Argmax(arg)) => layers::pool_backward(&dy, batch, &slot.in_shape, k, Some(arg)),
            (LayerSpec::BatchNorm2d { .. }, Aux::BatchNorm(bn)) => {
                layers::batchnorm_backward(&dy, batch, &slot.in_shape, p, bn, cache.mode == Mode::Train, g)
            }
            (LayerSpec::Dropout { .. }, Aux::DropMask(mask)) => dy.iter().zip(mask).map(|(d, m)| d * m).collect(),
            (LayerSpec::Dropout { .. }, _) => dy,
            _ => unreachable!("cache entry does not match layer"),
        }
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// averages.
    pub fn update_running_stats(&self, cache: &Cache, buffers: &mut [f64]) {
        if cache.mode != Mode::Train {
            return;
        }
        for (slot, aux) in self.layout.slots.iter().zip(&cache.aux) {
            if let Aux::BatchNorm(bn) = aux {
                layers::batchnorm_update_running(&mut buffers[slot.buffers.clone()], bn);
            }
        }
    }
}

fn conv_geometry(slot: &LayerSlot) -> ConvGeometry {
    let LayerSpec::Conv2d {
        kernel_h,
        kernel_w,
        out_channels,
        pad,
        ..
    } = slot.layer
    else {
        unreachable!()
    };
    ConvGeometry {
        channels: slot.in_shape[0],
        height: slot.in_shape[1],
        width: slot.in_shape[2],
        kernel_h,
        kernel_w,
        pad,
        out_channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::spec::HeadSpec;

    fn single_head(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Network {
        Network::new(NetworkSpec {
            input_shape,
            trunk: vec![],
            heads: vec![HeadSpec {
                name: "out".into(),
                kind: Default::default(),
                layers,
            }],
        })
        .unwrap()
    }

    #[test]
    fn dense_relu_hand_example() {
        let net = single_head(
            vec![2],
            vec![
                LayerSpec::Dense {
                    inputs: 2,
                    outputs: 1,
                    bias: true,
                },
                LayerSpec::Relu,
                LayerSpec::LinearOutput { inputs: 1, outputs: 1 },
            ],
        );
        let theta = [1.0, -1.0, 0.0, 1.0];
        let x = Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap();
        let (out, _) = net.forward(&theta, &[], &x, Mode::Eval, None).unwrap();
        assert_eq!(out[0].data(), &[0.0]);
    }

    #[test]
    fn linear_regression_gradient() {
        // loss (1/2J)Σ(Wb + y − t)²: dW = (Wb + y − t)bᵀ/J
        let net = single_head(
            vec![3],
            vec![
                LayerSpec::Dense {
                    inputs: 3,
                    outputs: 1,
                    bias: true,
                },
                LayerSpec::LinearOutput { inputs: 1, outputs: 1 },
            ],
        );
        let theta = [0.5, -0.2, 0.1, 0.3, 1.0];
        let b = [1.0, 2.0, -1.0];
        let t = 0.7;
        let x = Tensor::new(vec![1, 3], b.to_vec()).unwrap();
        let (out, cache) = net.forward(&theta, &[], &x, Mode::Train, None).unwrap();
        let r = out[0].data()[0] - t;
        let g = Tensor::new(vec![1, 1], vec![r]).unwrap();
        let grad = net.backward(&theta, &[], &cache, &[Some(&g)]).unwrap();
        for k in 0..3 {
            assert!((grad[k] - r * b[k]).abs() < 1e-15);
        }
        assert!((grad[3] - r).abs() < 1e-15);
        let zero = Tensor::zeros(vec![1, 1]);
        assert!(net.backward(&theta, &[], &cache, &[Some(&zero)]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_is_detected() {
        let net = single_head(vec![2], vec![LayerSpec::LinearOutput { inputs: 2, outputs: 1 }]);
        let theta = [1.0, 2.0];
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let (_, cache) = net.forward(&theta, &[], &x, Mode::Train, None).unwrap();
        let g = Tensor::zeros(vec![1, 1]);
        assert!(matches!(net.backward(&[1.0, 2.5], &[], &cache, &[Some(&g)]), Err(Error::StaleCache)));
    }

    #[test]
    fn dropout_modes() {
        let net = single_head(
            vec![100_000],
            vec![
                LayerSpec::Dropout { rate: 0.3 },
                LayerSpec::LinearOutput { inputs: 100_000, outputs: 1 },
            ],
        );
        let theta = vec![1.0; 100_000];
        let x = Tensor::new(vec![1, 100_000], vec![1.0; 100_000]).unwrap();
        let (eval, _) = net.forward(&theta, &[], &x, Mode::Eval, None).unwrap();
        assert_eq!(eval[0].data(), &[100_000.0]);
        assert!(net.forward(&theta, &[], &x, Mode::Train, None).is_err());
        let mut s = RngStream::new(8);
        let (_, cache) = net.forward(&theta, &[], &x, Mode::Train, Some(&mut s)).unwrap();
        let Aux::DropMask(mask) = &cache.aux[0] else { panic!() };
        let zeros = mask.iter().filter(|m| **m == 0.0).count() as f64;
        let sd = (100_000.0f64 * 0.3 * 0.7).sqrt();
        assert!((zeros - 30_000.0).abs() < 3.0 * sd);
        assert!(mask.iter().all(|m| *m == 0.0 || (*m - 1.0 / 0.7).abs() < 1e-15));
    }
}
