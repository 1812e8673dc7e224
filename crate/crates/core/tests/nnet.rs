use reglearn::linalg::{dot, DenseMatrix};
use reglearn::nnet::{
    elm_fit, gradient_check, train, train_two_stage, HeadKind, HeadSpec, LayerSpec, Mode, Network, NetworkSpec,
    OptimizerSpec, Tensor, TrainingOptions, TrainingSet,
};
use reglearn::rng::RngStream;

fn head(name: &str, layers: Vec<LayerSpec>) -> HeadSpec {
    HeadSpec {
        name: name.into(),
        kind: HeadKind::Continuous,
        layers,
    }
}

fn conv(cin: usize, cout: usize, k: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        kernel_h: k,
        kernel_w: k,
        in_channels: cin,
        out_channels: cout,
        pad: k / 2,
    }
}

fn dense(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Dense {
        inputs: i,
        outputs: o,
        bias: true,
    }
}

fn random_input(shape: &[usize], batch: usize, seed: u64) -> Tensor {
    let mut s = RngStream::new(seed);
    let per: usize = shape.iter().product();
    let mut full = vec![batch];
    full.extend_from_slice(shape);
    Tensor::new(full, (0..batch * per).map(|_| s.normal(0.0, 1.0)).collect()).unwrap()
}

/// Initial parameters plus noise so biases and scales are not at special values.
fn perturbed_params(net: &Network, seed: u64) -> Vec<f64> {
    let mut s = RngStream::new(seed);
    let mut theta = net.init_params(&mut s);
    theta.iter_mut().for_each(|t| *t += s.normal(0.0, 0.1));
    theta
}

fn check(spec: NetworkSpec, batch: usize, modes: &[Mode]) {
    let net = Network::new(spec).unwrap();
    let theta = perturbed_params(&net, 11);
    let mut buffers = net.initial_buffers();
    let mut s = RngStream::new(12);
    // non-trivial running statistics for eval mode
    let half = buffers.len() / 2;
    for (i, b) in buffers.iter_mut().enumerate() {
        *b = if (i / half.max(1)).is_multiple_of(2) { s.normal(0.0, 0.3) } else { s.uniform(0.5, 2.0) };
    }
    let input = random_input(&net.spec().input_shape, batch, 13);
    for &mode in modes {
        let r = gradient_check(&net, &theta, &buffers, &input, mode, 200, 1e-5, 14).unwrap();
        assert!(r.coordinates_checked >= 200.min(net.param_count()));
        assert!(
            r.max_relative_error < 1e-6,
            "{mode:?}: max relative error {} at {}",
            r.max_relative_error,
            r.worst_coordinate
        );
    }
}

#[test]
fn gradcheck_dense_relu() {
    check(NetworkSpec::mlp(&[6, 5, 4, 2], "out"), 4, &[Mode::Train, Mode::Eval]);
}

#[test]
fn gradcheck_dense_without_bias() {
    let spec = NetworkSpec {
        input_shape: vec![5],
        trunk: vec![
            LayerSpec::Dense {
                inputs: 5,
                outputs: 4,
                bias: false,
            },
            LayerSpec::Relu,
        ],
        heads: vec![head("out", vec![LayerSpec::LinearOutput { inputs: 4, outputs: 3 }])],
    };
    check(spec, 3, &[Mode::Eval]);
}

#[test]
fn gradcheck_conv() {
    let spec = NetworkSpec {
        input_shape: vec![2, 6, 5],
        trunk: vec![conv(2, 3, 3), LayerSpec::Relu],
        heads: vec![head("out", vec![LayerSpec::LinearOutput { inputs: 90, outputs: 2 }])],
    };
    check(spec, 3, &[Mode::Eval]);
}

#[test]
fn gradcheck_pooling() {
    for pool in [LayerSpec::AvgPool2d { k: 2 }, LayerSpec::MaxPool2d { k: 2 }] {
        let spec = NetworkSpec {
            input_shape: vec![1, 6, 6],
            trunk: vec![conv(1, 2, 3), pool],
            heads: vec![head("out", vec![LayerSpec::LinearOutput { inputs: 18, outputs: 1 }])],
        };
        check(spec, 3, &[Mode::Eval]);
    }
}

#[test]
fn gradcheck_batchnorm_both_modes() {
    let spec = NetworkSpec {
        input_shape: vec![1, 4, 4],
        trunk: vec![conv(1, 3, 3), LayerSpec::BatchNorm2d { channels: 3 }, LayerSpec::Relu],
        heads: vec![head("out", vec![LayerSpec::LinearOutput { inputs: 48, outputs: 2 }])],
    };
    check(spec, 4, &[Mode::Train, Mode::Eval]);
}

#[test]
fn gradcheck_dropout_with_replayed_mask() {
    let spec = NetworkSpec {
        input_shape: vec![8],
        trunk: vec![dense(8, 10), LayerSpec::Relu, LayerSpec::Dropout { rate: 0.3 }],
        heads: vec![head("out", vec![LayerSpec::LinearOutput { inputs: 10, outputs: 1 }])],
    };
    check(spec, 5, &[Mode::Train, Mode::Eval]);
}

#[test]
fn gradcheck_two_heads() {
    let spec = NetworkSpec {
        input_shape: vec![1, 6, 6],
        trunk: vec![conv(1, 2, 3), LayerSpec::Relu, LayerSpec::MaxPool2d { k: 2 }],
        heads: vec![
            head("gamma", vec![LayerSpec::LinearOutput { inputs: 18, outputs: 1 }]),
            head(
                "lambda",
                vec![dense(18, 4), LayerSpec::Relu, LayerSpec::LinearOutput { inputs: 4, outputs: 1 }],
            ),
        ],
    };
    check(spec, 3, &[Mode::Train, Mode::Eval]);
}

fn adam_options(epochs: usize, batch_size: usize, lr: f64) -> TrainingOptions {
    TrainingOptions {
        optimizer: OptimizerSpec::adam(lr),
        batch_size,
        epochs,
        weight_decay: 0.0,
        seed: 5,
        freeze: vec![],
    }
}

#[test]
fn overfits_a_single_sample() {
    let spec = NetworkSpec::mlp(&[4, 8, 1], "out");
    let data = TrainingSet {
        inputs: Tensor::new(vec![1, 4], vec![0.3, -1.0, 2.0, 0.5]).unwrap(),
        targets: vec![("out".into(), Tensor::new(vec![1, 1], vec![1.7]).unwrap())],
    };
    let ck = train(&spec, &data, &adam_options(2000, 1, 1e-3)).unwrap();
    assert!(*ck.history[0].epoch_loss.last().unwrap() < 1e-4);
    let p = ck.predict(&data.inputs).unwrap();
    assert!((p[0].raw.data()[0] - 1.7).abs() < 1e-2);
}

fn toy_set(j: usize, seed: u64) -> TrainingSet {
    let mut s = RngStream::new(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..j {
        let a = s.uniform(-1.0, 1.0);
        let b = s.uniform(-1.0, 1.0);
        x.extend_from_slice(&[a, b, a * b]);
        y.push((2.0 * a).sin() + b * b);
    }
    TrainingSet {
        inputs: Tensor::new(vec![j, 3], x).unwrap(),
        targets: vec![("out".into(), Tensor::new(vec![j, 1], y).unwrap())],
    }
}

#[test]
fn training_is_deterministic_and_descends() {
    let spec = NetworkSpec::mlp(&[3, 16, 8, 1], "out");
    let data = toy_set(200, 3);
    let opts = TrainingOptions {
        weight_decay: 1e-3,
        ..adam_options(30, 16, 1e-2)
    };
    let a = train(&spec, &data, &opts).unwrap();
    let b = train(&spec, &data, &opts).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let h = &a.history[0].epoch_loss;
    assert_eq!(h.len(), 30);
    assert!(h.last().unwrap() < &h[0]);
}

#[test]
fn sgd_momentum_trains() {
    let spec = NetworkSpec::mlp(&[3, 16, 1], "out");
    let opts = TrainingOptions {
        optimizer: OptimizerSpec::SgdMomentum { lr: 0.01, momentum: 0.9 },
        ..adam_options(20, 16, 1e-2)
    };
    let ck = train(&spec, &toy_set(200, 4), &opts).unwrap();
    let h = &ck.history[0].epoch_loss;
    assert!(h.last().unwrap() < &h[0]);
}

#[test]
fn frozen_layers_do_not_move() {
    let spec = NetworkSpec::mlp(&[3, 8, 1], "out");
    let data = toy_set(50, 5);
    let opts = TrainingOptions {
        freeze: vec!["out.0".into()],
        ..adam_options(5, 10, 1e-2)
    };
    let ck = train(&spec, &data, &opts).unwrap();
    let net = Network::new(spec).unwrap();
    let init = net.init_params(&mut RngStream::new(5).substream(0));
    let first = net.layout().slots[0].params.clone();
    assert_eq!(ck.theta[first.clone()], init[first]);
    assert_ne!(ck.theta, init);
}

fn two_head_problem(j: usize) -> (NetworkSpec, TrainingSet) {
    let spec = NetworkSpec {
        input_shape: vec![1, 4, 4],
        trunk: vec![
            conv(1, 2, 3),
            LayerSpec::BatchNorm2d { channels: 2 },
            LayerSpec::Relu,
            LayerSpec::AvgPool2d { k: 2 },
        ],
        heads: vec![
            head("gamma", vec![LayerSpec::LinearOutput { inputs: 8, outputs: 1 }]),
            head(
                "lambda",
                vec![dense(8, 8), LayerSpec::Relu, LayerSpec::LinearOutput { inputs: 8, outputs: 1 }],
            ),
        ],
    };
    let mut s = RngStream::new(9);
    let mut x = Vec::new();
    let mut g = Vec::new();
    for _ in 0..j {
        let gamma = s.uniform(1.0, 2.0);
        for i in 0..16 {
            x.push(gamma * (i as f64 / 4.0).cos() + s.normal(0.0, 0.05));
        }
        g.push(gamma);
    }
    let lambda: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
    let data = TrainingSet {
        inputs: Tensor::new(vec![j, 1, 4, 4], x).unwrap(),
        targets: vec![
            ("gamma".into(), Tensor::new(vec![j, 1], g).unwrap()),
            ("lambda".into(), Tensor::new(vec![j, 1], lambda).unwrap()),
        ],
    };
    (spec, data)
}

#[test]
fn two_stage_keeps_trunk_and_learns_second_head() {
    let (spec, data) = two_head_problem(200);
    let s1 = adam_options(40, 20, 1e-2);
    let s2 = adam_options(60, 20, 1e-2);
    let stage1_only = train_two_stage(&spec, &data, "gamma", "lambda", &s1, &TrainingOptions { epochs: 0, ..s2.clone() }).unwrap();
    let full = train_two_stage(&spec, &data, "gamma", "lambda", &s1, &s2).unwrap();
    let net = Network::new(spec).unwrap();
    let layout = net.layout();
    let trunk = layout.param_range(&layout.trunk);
    let gamma = layout.param_range(&layout.heads[0]);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&full.theta[trunk.clone()]), bits(&stage1_only.theta[trunk]));
    assert_eq!(bits(&full.theta[gamma.clone()]), bits(&stage1_only.theta[gamma]));
    assert_eq!(bits(&full.buffers), bits(&stage1_only.buffers));
    // loss is on standardized targets; the relation λ = 2γ is exactly learnable
    assert!(*full.history[1].epoch_loss.last().unwrap() < 1e-2);
    let p = full.predict(&data.inputs).unwrap();
    assert_eq!(p.len(), 2);
}

#[test]
fn elm_residual_is_globally_optimal() {
    let mut s = RngStream::new(17);
    let b = DenseMatrix::from_fn(60, 8, |_, _| s.normal(0.0, 1.0));
    let t: Vec<f64> = (0..60).map(|_| s.normal(0.0, 1.0)).collect();
    let fit = elm_fit(&b, &t).unwrap();
    let residual = |w: &[f64], y: f64| -> f64 { (0..60).map(|r| (dot(b.row(r), w) + y - t[r]).powi(2)).sum() };
    let base = residual(&fit.weights, fit.bias);
    for _ in 0..20 {
        let dir: Vec<f64> = (0..9).map(|_| s.normal(0.0, 1.0)).collect();
        let n = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        for sign in [1e-3, -1e-3] {
            let w: Vec<f64> = fit.weights.iter().zip(&dir).map(|(w, d)| w + sign * d / n).collect();
            assert!(residual(&w, fit.bias + sign * dir[8] / n) >= base);
        }
    }
}
