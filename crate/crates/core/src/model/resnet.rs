use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::network::{Conv2d, Dense, Layer, Network, Node};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fan-in scaled normal samples, `N(0, 2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z * std)
    })
}

fn conv<T: Scalar>(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Layer<T> {
    Layer::Conv2d(Conv2d {
        weight: he_normal(&[cout, 3, 3, cin], 9 * cin, rng),
        bias: Tensor::zeros(&[cout]),
        stride: 1,
        padding: 1,
    })
}

/// Stem conv + ReLU, `blocks` residual blocks
/// (conv, ReLU, conv, add identity skip, ReLU), global average pool, dense
/// head, softmax. Every conv is 3x3, stride 1, zero padding 1, so feature
/// maps keep the input resolution. The last conv is flagged for Grad-CAM.
pub fn build_mini_resnet<T: Scalar>(
    input_shape: [usize; 3],
    classes: usize,
    blocks: usize,
    width: usize,
    seed: u64,
) -> Result<Network<T>> {
    let [m, n, c] = input_shape;
    if m < 8 || n < 8 {
        return Err(Error::InvalidConfig(format!(
            "mini-ResNet needs at least 8x8 inputs, got {m}x{n}"
        )));
    }
    if c != 1 && c != 3 {
        return Err(Error::InvalidConfig(format!("expected 1 or 3 channels, got {c}")));
    }
    if blocks == 0 {
        return Err(Error::InvalidConfig("at least one residual block is required".into()));
    }
    if classes < 2 || width == 0 {
        return Err(Error::InvalidConfig(format!(
            "need >= 2 classes and a positive width, got {classes} classes, width {width}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![Node::new(conv(c, width, &mut rng), vec![0]), Node::new(Layer::Relu, vec![1])];
    let mut skip = nodes.len();
    let mut last_conv = 1;
    for _ in 0..blocks {
        let base = nodes.len();
        nodes.push(Node::new(conv(width, width, &mut rng), vec![skip]));
        nodes.push(Node::new(Layer::Relu, vec![base + 1]));
        nodes.push(Node::new(conv(width, width, &mut rng), vec![base + 2]));
        last_conv = base + 3;
        nodes.push(Node::new(Layer::Add, vec![base + 3, skip]));
        nodes.push(Node::new(Layer::Relu, vec![base + 4]));
        skip = base + 5;
    }
    nodes.push(Node::new(Layer::GlobalAvgPool, vec![skip]));
    let gap = nodes.len();
    nodes.push(Node::new(
        Layer::Dense(Dense {
            weight: he_normal(&[classes, width], width, &mut rng),
            bias: Tensor::zeros(&[classes]),
        }),
        vec![gap],
    ));
    let head = nodes.len();
    nodes.push(Node::new(Layer::Softmax, vec![head]));

    let mut net = Network::new(vec![m, n, c], nodes)?;
    net.set_gradcam_layer(last_conv)?;
    Ok(net)
}
