#![allow(dead_code)]

use advsal_core::autodiff::{forward, Objective};
use advsal_core::{Conv2d, Dense, Layer, Network, Node, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

use advsal_core::data::{gen_synthetic, SyntheticSpec};
use advsal_core::model::{build_mini_resnet, train, TrainConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    // Sum of uniforms: close enough to normal for test weights.
    Tensor::from_fn(shape, |_| (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * std * 0.866)
}

pub fn uniform_image(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

pub fn conv(cin: usize, cout: usize, k: usize, stride: usize, padding: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
    let std = (2.0 / (k * k * cin) as f64).sqrt();
    Layer::Conv2d(Conv2d {
        weight: normal_tensor(&[cout, k, k, cin], std, rng),
        bias: normal_tensor(&[cout], 0.1, rng),
        stride,
        padding,
    })
}

pub fn dense(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
    Layer::Dense(Dense {
        weight: normal_tensor(&[outputs, inputs], (2.0 / inputs as f64).sqrt(), rng),
        bias: normal_tensor(&[outputs], 0.1, rng),
    })
}

/// conv -> relu -> conv -> relu -> (maxpool | gap) -> dense -> softmax, with
/// stride/padding/pooling varied by seed.
pub fn random_conv_net(seed: u64) -> (Network<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let h = r.random_range(4..7);
    let w = r.random_range(4..7);
    let c = r.random_range(1..3);
    let c1 = r.random_range(2..5);
    let c2 = r.random_range(2..5);
    let classes = r.random_range(2..5);
    let stride = r.random_range(1..3);
    let pad = r.random_range(0..2);
    let mut nodes = vec![
        Node::new(conv(c, c1, 3, stride, pad, &mut r), vec![0]),
        Node::new(Layer::Relu, vec![1]),
        Node::new(conv(c1, c2, 2, 1, 1, &mut r), vec![2]),
        Node::new(Layer::Relu, vec![3]),
    ];
    let net0 = Network::new(vec![h, w, c], {
        let mut n = nodes.clone();
        n.push(Node::new(Layer::Softmax, vec![4]));
        n
    })
    .unwrap();
    let fshape = net0.value_shape(4).unwrap().to_vec();
    let flat = if r.random_bool(0.5) && fshape[0] >= 2 && fshape[1] >= 2 {
        nodes.push(Node::new(Layer::MaxPool { size: 2, stride: 1 }, vec![4]));
        (fshape[0] - 1) * (fshape[1] - 1) * fshape[2]
    } else {
        nodes.push(Node::new(Layer::GlobalAvgPool, vec![4]));
        fshape[2]
    };
    nodes.push(Node::new(dense(flat, classes, &mut r), vec![5]));
    nodes.push(Node::new(Layer::Softmax, vec![6]));
    let net = Network::new(vec![h, w, c], nodes).unwrap();
    let x = uniform_image(&[h, w, c], &mut r);
    (net, x)
}

/// Independent central-difference gradient of `objective` w.r.t. `x`.
pub fn fd_gradient(net: &Network<f64>, x: &Tensor<f64>, objective: Objective, eps: f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = x.data()[i];
            probe.data_mut()[i] = orig + eps;
            let up = forward(net, &probe).unwrap().objective_value(net, objective);
            probe.data_mut()[i] = orig - eps;
            let down = forward(net, &probe).unwrap().objective_value(net, objective);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

/// conv (9 channels... configurable) -> GAP -> dense -> softmax; classic CAM architecture.
pub fn gap_linear_net(seed: u64, h: usize, w: usize, cin: usize, channels: usize, classes: usize) -> Network<f64> {
    let mut r = rng(seed);
    let nodes = vec![
        Node::new(conv(cin, channels, 3, 1, 1, &mut r), vec![0]),
        Node::new(Layer::GlobalAvgPool, vec![1]),
        Node::new(dense(channels, classes, &mut r), vec![2]),
        Node::new(Layer::Softmax, vec![3]),
    ];
    Network::new(vec![h, w, cin], nodes).unwrap()
}

/// Single dense layer `logits = W x + b` over an HWC input.
pub fn linear_net(shape: &[usize], weight: Vec<f64>, bias: Vec<f64>) -> Network<f64> {
    let inputs: usize = shape.iter().product();
    let outputs = bias.len();
    Network::new(
        shape.to_vec(),
        vec![
            Node::new(
                Layer::Dense(Dense {
                    weight: Tensor::new(vec![outputs, inputs], weight).unwrap(),
                    bias: Tensor::new(vec![outputs], bias).unwrap(),
                }),
                vec![0],
            ),
            Node::new(Layer::Softmax, vec![1]),
        ],
    )
    .unwrap()
}

/// Copy of `net` with every dense weight and bias set to zero.
pub fn zero_head(net: &Network<f64>) -> Network<f64> {
    let nodes = net
        .nodes()
        .iter()
        .map(|n| match &n.layer {
            Layer::Dense(d) => Node::new(
                Layer::Dense(Dense {
                    weight: Tensor::zeros(d.weight.shape()),
                    bias: Tensor::zeros(d.bias.shape()),
                }),
                n.inputs.clone(),
            ),
            _ => n.clone(),
        })
        .collect();
    Network::new(net.input_shape().to_vec(), nodes).unwrap()
}

/// Copy of `net` with dense weights and biases scaled by `s`.
pub fn scale_head(net: &Network<f64>, s: f64) -> Network<f64> {
    let nodes = net
        .nodes()
        .iter()
        .map(|n| match &n.layer {
            Layer::Dense(d) => Node::new(
                Layer::Dense(Dense {
                    weight: d.weight.map(|v| v * s),
                    bias: d.bias.map(|v| v * s),
                }),
                n.inputs.clone(),
            ),
            _ => n.clone(),
        })
        .collect();
    Network::new(net.input_shape().to_vec(), nodes).unwrap()
}

/// Small mini-ResNet trained on 8x8 synthetic images, with 24 of its samples.
pub fn trained() -> &'static (Network<f64>, Vec<(Tensor<f64>, usize)>) {
    static NET: OnceLock<(Network<f64>, Vec<(Tensor<f64>, usize)>)> = OnceLock::new();
    NET.get_or_init(|| {
        let spec = SyntheticSpec { size: 8, count: 120, channels: 1, ..SyntheticSpec::default() };
        let data = gen_synthetic::<f64>(&spec).unwrap();
        let net = build_mini_resnet([8, 8, 1], 2, 1, 4, 1).unwrap();
        let cfg = TrainConfig { epochs: 8, batch_size: 8, ..TrainConfig::default() };
        let (net, _) = train(net, &data, &cfg).unwrap();
        let samples = data.images().iter().cloned().zip(data.labels().iter().copied()).take(24).collect();
        (net, samples)
    })
}
