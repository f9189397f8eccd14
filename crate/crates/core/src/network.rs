//! Layer graph realizing `g(x) = f_k(... f_1(x))`, with residual `Add` nodes.
//!
//! Value ids: `0` is the network input, node `i` produces value `i + 1`.
//! Layer indices used by the feature-gradient and Grad-CAM APIs are value
//! ids, so layer `0` is the input and layer `i` is the output of `f_i`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `[out_channels, kernel_h, kernel_w, in_channels]`
    pub weight: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[1], self.weight.shape()[2])
    }
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[outputs, inputs]`; the input tensor is flattened row-major.
    pub weight: Tensor<T>,
    /// `[outputs]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Relu,
    /// Elementwise sum of exactly two equally shaped inputs.
    Add,
    /// Unpadded max pooling over square windows.
    MaxPool { size: usize, stride: usize },
    GlobalAvgPool,
    Dense(Dense<T>),
    Softmax,
}

impl<T> Layer<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::Add => "add",
            Layer::MaxPool { .. } => "max_pool",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Layer::Add => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    pub layer: Layer<T>,
    /// Value ids consumed by this node; all refer to earlier values.
    pub inputs: Vec<usize>,
}

impl<T> Node<T> {
    pub fn new(layer: Layer<T>, inputs: Vec<usize>) -> Self {
        Self { layer, inputs }
    }
}

/// Conv output extent along one spatial axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// A validated classifier graph with a single terminal softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    nodes: Vec<Node<T>>,
    shapes: Vec<Vec<usize>>,
    gradcam_layer: Option<usize>,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_shape: Vec<usize>, nodes: Vec<Node<T>>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!(
                "input shape must have positive extents, got {input_shape:?}"
            )));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, node) in nodes.iter().enumerate() {
            let id = i + 1;
            if node.inputs.len() != node.layer.arity() {
                return Err(Error::InvalidNetwork(format!(
                    "node {id} ({}) takes {} inputs, got {}",
                    node.layer.kind_name(),
                    node.layer.arity(),
                    node.inputs.len()
                )));
            }
            if let Some(&bad) = node.inputs.iter().find(|&&v| v >= id) {
                return Err(Error::InvalidNetwork(format!(
                    "node {id} reads value {bad}, which is not computed before it"
                )));
            }
            if matches!(node.layer, Layer::Softmax) && id != nodes.len() {
                return Err(Error::InvalidNetwork(format!(
                    "softmax at node {id} is not terminal"
                )));
            }
            let shape = output_shape(id, &node.layer, &node.inputs, &shapes)?;
            shapes.push(shape);
        }
        if !matches!(nodes.last().map(|n| &n.layer), Some(Layer::Softmax)) {
            return Err(Error::InvalidNetwork("final node must be softmax".into()));
        }
        let net = Self {
            input_shape,
            nodes,
            shapes,
            gradcam_layer: None,
        };
        if !net.parameters_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    /// Value id of the final softmax output.
    pub fn output_id(&self) -> usize {
        self.nodes.len()
    }

    /// Shape of value `id` (0 = input).
    pub fn value_shape(&self, id: usize) -> Option<&[usize]> {
        self.shapes.get(id).map(Vec::as_slice)
    }

    /// The node producing value `id`, if `id` is not the input.
    pub fn producer(&self, id: usize) -> Option<&Node<T>> {
        id.checked_sub(1).and_then(|i| self.nodes.get(i))
    }

    pub fn is_conv_layer(&self, id: usize) -> bool {
        matches!(self.producer(id).map(|n| &n.layer), Some(Layer::Conv2d(_)))
    }

    /// Value ids of all convolution outputs, in graph order.
    pub fn conv_layers(&self) -> Vec<usize> {
        (1..=self.nodes.len()).filter(|&id| self.is_conv_layer(id)).collect()
    }

    /// Layer used by Grad-CAM when none is requested: the flagged layer, or
    /// the last convolution.
    pub fn default_gradcam_layer(&self) -> Option<usize> {
        self.gradcam_layer.or_else(|| self.conv_layers().last().copied())
    }

    pub fn set_gradcam_layer(&mut self, layer: usize) -> Result<()> {
        if !self.is_conv_layer(layer) {
            return Err(Error::NotConvolutional(layer));
        }
        self.gradcam_layer = Some(layer);
        Ok(())
    }

    pub(crate) fn gradcam_flag(&self) -> Option<usize> {
        self.gradcam_layer
    }

    pub fn parameters_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.is_finite())
    }

    /// All parameter tensors in node order (weight before bias).
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.layer {
                Layer::Conv2d(c) => {
                    out.push(&c.weight);
                    out.push(&c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&d.weight);
                    out.push(&d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match &mut node.layer {
                Layer::Conv2d(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Same topology in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let layer = match &n.layer {
                    Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                        weight: c.weight.cast(),
                        bias: c.bias.cast(),
                        stride: c.stride,
                        padding: c.padding,
                    }),
                    Layer::Dense(d) => Layer::Dense(Dense {
                        weight: d.weight.cast(),
                        bias: d.bias.cast(),
                    }),
                    Layer::Relu => Layer::Relu,
                    Layer::Add => Layer::Add,
                    Layer::MaxPool { size, stride } => Layer::MaxPool {
                        size: *size,
                        stride: *stride,
                    },
                    Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                    Layer::Softmax => Layer::Softmax,
                };
                Node::new(layer, n.inputs.clone())
            })
            .collect();
        Network {
            input_shape: self.input_shape.clone(),
            nodes,
            shapes: self.shapes.clone(),
            gradcam_layer: self.gradcam_layer,
        }
    }
}

fn output_shape<T: Scalar>(
    id: usize,
    layer: &Layer<T>,
    inputs: &[usize],
    shapes: &[Vec<usize>],
) -> Result<Vec<usize>> {
    let first = &shapes[inputs[0]];
    let bad = |msg: String| Error::InvalidNetwork(format!("node {id} ({}): {msg}", layer.kind_name()));
    match layer {
        Layer::Conv2d(c) => {
            if c.weight.shape().len() != 4 || c.bias.shape() != [c.out_channels()] {
                return Err(bad(format!(
                    "weight {:?} / bias {:?} malformed",
                    c.weight.shape(),
                    c.bias.shape()
                )));
            }
            if first.len() != 3 || first[2] != c.in_channels() {
                return Err(bad(format!(
                    "expects [h, w, {}] input, got {first:?}",
                    c.in_channels()
                )));
            }
            let (kh, kw) = c.kernel();
            let oh = conv_output_extent(first[0], kh, c.stride, c.padding);
            let ow = conv_output_extent(first[1], kw, c.stride, c.padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) => Ok(vec![oh, ow, c.out_channels()]),
                _ => Err(bad(format!("kernel {kh}x{kw} does not fit input {first:?}"))),
            }
        }
        Layer::Relu => Ok(first.clone()),
        Layer::Add => {
            let second = &shapes[inputs[1]];
            if first != second {
                return Err(bad(format!("skip edge joins {first:?} and {second:?}")));
            }
            Ok(first.clone())
        }
        Layer::MaxPool { size, stride } => {
            if first.len() != 3 {
                return Err(bad(format!("expects [h, w, c] input, got {first:?}")));
            }
            let oh = conv_output_extent(first[0], *size, *stride, 0);
            let ow = conv_output_extent(first[1], *size, *stride, 0);
            match (oh, ow, *size > 0) {
                (Some(oh), Some(ow), true) => Ok(vec![oh, ow, first[2]]),
                _ => Err(bad(format!("window {size} does not fit input {first:?}"))),
            }
        }
        Layer::GlobalAvgPool => {
            if first.len() != 3 {
                return Err(bad(format!("expects [h, w, c] input, got {first:?}")));
            }
            Ok(vec![first[2]])
        }
        Layer::Dense(d) => {
            let fan_in: usize = first.iter().product();
            let ws = d.weight.shape();
            if ws.len() != 2 || ws[1] != fan_in || d.bias.shape() != [ws[0]] {
                return Err(bad(format!(
                    "weight {ws:?} / bias {:?} incompatible with {fan_in} inputs",
                    d.bias.shape()
                )));
            }
            Ok(vec![ws[0]])
        }
        Layer::Softmax => {
            let n: usize = first.iter().product();
            if n < 2 {
                return Err(bad("softmax needs at least two logits".into()));
            }
            Ok(vec![n])
        }
    }
}
