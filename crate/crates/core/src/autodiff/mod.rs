//! Reverse-mode differentiation over a recorded forward pass.
//!
//! The ReLU backward rule is chosen per backward pass, so one
//! [`ForwardRecord`] serves standard gradients, deconv-style rectified
//! gradients, and guided backpropagation alike.

mod kernels;

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How gradients pass backward through ReLU units. Other ops are unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackpropMode {
    /// Exact derivative: pass where the pre-activation is positive.
    #[default]
    Standard,
    /// Pass only non-negative upstream gradient, ignoring activations.
    Deconv,
    /// Pass only non-negative upstream gradient through active units.
    Guided,
}

impl BackpropMode {
    pub fn code(self) -> u8 {
        match self {
            BackpropMode::Standard => 0,
            BackpropMode::Deconv => 1,
            BackpropMode::Guided => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BackpropMode::Standard),
            1 => Some(BackpropMode::Deconv),
            2 => Some(BackpropMode::Guided),
            _ => None,
        }
    }
}

/// Scalar function of the network output that a backward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "objective", content = "label")]
pub enum Objective {
    /// Post-softmax confidence `g(x)_label`.
    SoftLabel(usize),
    /// Pre-softmax score of `label`.
    Logit(usize),
    /// `-ln g(x)_label`.
    CrossEntropy(usize),
}

impl Objective {
    pub fn label(self) -> usize {
        match self {
            Objective::SoftLabel(l) | Objective::Logit(l) | Objective::CrossEntropy(l) => l,
        }
    }

    /// Same objective kind, different class.
    pub fn with_label(self, label: usize) -> Self {
        match self {
            Objective::SoftLabel(_) => Objective::SoftLabel(label),
            Objective::Logit(_) => Objective::Logit(label),
            Objective::CrossEntropy(_) => Objective::CrossEntropy(label),
        }
    }
}

thread_local! {
    static BACKWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of backward passes run on the current thread so far.
pub fn backward_pass_count() -> u64 {
    BACKWARD_PASSES.with(Cell::get)
}

/// Every intermediate value of one forward pass; value `0` is the input.
#[derive(Debug, Clone)]
pub struct ForwardRecord<T> {
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardRecord<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.values[0]
    }

    pub fn value(&self, id: usize) -> Option<&Tensor<T>> {
        self.values.get(id)
    }

    /// Class probabilities `g(x)`.
    pub fn probabilities(&self) -> &[T] {
        self.values.last().expect("record holds the output").data()
    }

    pub fn predicted(&self) -> usize {
        crate::tensor::argmax(self.probabilities())
    }

    /// Value of `objective` at this record.
    pub fn objective_value<N: Scalar>(&self, net: &Network<N>, objective: Objective) -> T {
        let l = objective.label();
        match objective {
            Objective::SoftLabel(_) => self.probabilities()[l],
            Objective::Logit(_) => self.logits(net)[l],
            Objective::CrossEntropy(_) => {
                // logsumexp(z) - z_l, exact even when p_l rounds to one.
                let z = self.logits(net);
                let m = z.iter().copied().fold(T::neg_infinity(), T::max);
                let top = z.iter().position(|&v| v == m).expect("finite logits");
                let rest: T = z.iter().enumerate().filter(|&(j, _)| j != top).map(|(_, &v)| (v - m).exp()).sum();
                m - z[l] + rest.ln_1p()
            }
        }
    }

    /// Softmax input values, flattened.
    pub fn logits<N: Scalar>(&self, net: &Network<N>) -> &[T] {
        self.values[logits_id(net)].data()
    }
}

fn logits_id<T: Scalar>(net: &Network<T>) -> usize {
    net.nodes().last().expect("validated network").inputs[0]
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    values: Vec<Option<Tensor<T>>>,
    params: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. value `id`; zero when the objective does not depend on it.
    pub fn value(&self, id: usize, shape: &[usize]) -> Tensor<T> {
        self.values
            .get(id)
            .and_then(Clone::clone)
            .unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Parameter gradients aligned with [`Network::parameters`].
    pub fn params(&self) -> Option<&[Tensor<T>]> {
        self.params.as_deref()
    }

    pub fn into_params(self) -> Option<Vec<Tensor<T>>> {
        self.params
    }
}

/// Runs the network on `x`, retaining every intermediate value.
pub fn forward<T: Scalar>(net: &Network<T>, x: &Tensor<T>) -> Result<ForwardRecord<T>> {
    x.expect_shape(net.input_shape())?;
    if !x.is_finite() {
        return Err(Error::NonFinite("network input"));
    }
    let mut values: Vec<Tensor<T>> = Vec::with_capacity(net.nodes().len() + 1);
    values.push(Tensor::from_parts(x.shape().to_vec(), x.data().to_vec()));
    for (i, node) in net.nodes().iter().enumerate() {
        let shape = net.value_shape(i + 1).expect("validated shapes");
        let a = &values[node.inputs[0]];
        let out = match &node.layer {
            Layer::Conv2d(c) => kernels::conv2d_forward(a, c, shape),
            Layer::Relu => kernels::relu_forward(a),
            Layer::Add => a.zip_map(&values[node.inputs[1]], |p, q| p + q)?,
            Layer::MaxPool { size, stride } => kernels::max_pool_forward(a, *size, *stride, shape),
            Layer::GlobalAvgPool => kernels::gap_forward(a),
            Layer::Dense(d) => kernels::dense_forward(a, d),
            Layer::Softmax => Tensor::from_parts(shape.to_vec(), kernels::softmax(a.data())),
        };
        values.push(out);
    }
    Ok(ForwardRecord { values })
}

/// Applies a single node to explicit inputs; used to check that [`forward`]
/// is the plain composition of its layers.
pub fn apply_layer<T: Scalar>(net: &Network<T>, node_index: usize, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let node = net
        .nodes()
        .get(node_index)
        .ok_or(Error::InvalidLayer(node_index + 1))?;
    let shape = net.value_shape(node_index + 1).expect("validated shapes");
    for (k, &v) in node.inputs.iter().enumerate() {
        let want = net.value_shape(v).expect("validated shapes");
        inputs
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("node {} needs {} inputs", node_index + 1, node.inputs.len())))?
            .expect_shape(want)?;
    }
    let a = inputs[0];
    Ok(match &node.layer {
        Layer::Conv2d(c) => kernels::conv2d_forward(a, c, shape),
        Layer::Relu => kernels::relu_forward(a),
        Layer::Add => a.zip_map(inputs[1], |p, q| p + q)?,
        Layer::MaxPool { size, stride } => kernels::max_pool_forward(a, *size, *stride, shape),
        Layer::GlobalAvgPool => kernels::gap_forward(a),
        Layer::Dense(d) => kernels::dense_forward(a, d),
        Layer::Softmax => Tensor::from_parts(shape.to_vec(), kernels::softmax(a.data())),
    })
}

fn check_record<T: Scalar>(net: &Network<T>, record: &ForwardRecord<T>) -> Result<()> {
    if record.values.len() != net.nodes().len() + 1 {
        return Err(Error::RecordMismatch);
    }
    for (id, v) in record.values.iter().enumerate() {
        if net.value_shape(id) != Some(v.shape()) {
            return Err(Error::RecordMismatch);
        }
    }
    Ok(())
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                *a += *g;
            }
        }
        None => *slot = Some(grad),
    }
}

/// Full backward pass. `want_params` additionally collects parameter
/// gradients; `want_input` keeps the gradient w.r.t. the network input.
pub fn backward<T: Scalar>(
    net: &Network<T>,
    record: &ForwardRecord<T>,
    objective: Objective,
    mode: BackpropMode,
    want_params: bool,
    want_input: bool,
) -> Result<Gradients<T>> {
    check_record(net, record)?;
    let classes = net.classes();
    let label = objective.label();
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    BACKWARD_PASSES.with(|c| c.set(c.get() + 1));

    let n = net.nodes().len();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; n + 1];
    let probs = record.probabilities();
    match objective {
        Objective::SoftLabel(l) => {
            grads[n] = Some(Tensor::from_fn(&[classes], |j| if j == l { T::one() } else { T::zero() }));
        }
        Objective::Logit(l) => {
            let id = logits_id(net);
            grads[id] = Some(Tensor::from_fn(record.values[id].shape(), |j| {
                if j == l {
                    T::one()
                } else {
                    T::zero()
                }
            }));
        }
        Objective::CrossEntropy(l) => {
            let id = logits_id(net);
            // p_l - 1 as minus the other classes' mass, which stays non-zero
            // when p_l rounds to one.
            let rest: T = probs.iter().enumerate().filter(|&(j, _)| j != l).map(|(_, &p)| p).sum();
            grads[id] = Some(Tensor::from_fn(record.values[id].shape(), |j| if j == l { -rest } else { probs[j] }));
        }
    }

    let param_slots: Vec<usize> = net
        .nodes()
        .iter()
        .map(|node| matches!(node.layer, Layer::Conv2d(_) | Layer::Dense(_)) as usize)
        .collect();
    let mut param_grads: Vec<Option<(Tensor<T>, Tensor<T>)>> = vec![None; n];

    for i in (0..n).rev() {
        let id = i + 1;
        let Some(g) = grads[id].take() else { continue };
        let node = &net.nodes()[i];
        let src = node.inputs[0];
        let a = &record.values[src];
        // Gradient into the network input is only materialized on request.
        let need_in = src != 0 || want_input;
        match &node.layer {
            Layer::Conv2d(c) => {
                let (gin, gp) = kernels::conv2d_backward(a, c, &g, need_in, want_params);
                if let Some(gin) = gin {
                    accumulate(&mut grads[src], gin);
                }
                param_grads[i] = gp;
            }
            Layer::Dense(d) => {
                let (gin, gp) = kernels::dense_backward(a, d, &g, need_in, want_params);
                if let Some(gin) = gin {
                    accumulate(&mut grads[src], gin);
                }
                param_grads[i] = gp;
            }
            Layer::Relu => accumulate(&mut grads[src], kernels::relu_backward(a, &g, mode)),
            Layer::Add => {
                accumulate(&mut grads[node.inputs[1]], g.clone());
                accumulate(&mut grads[src], g.clone());
            }
            Layer::MaxPool { size, stride } => {
                accumulate(&mut grads[src], kernels::max_pool_backward(a, *size, *stride, &g))
            }
            Layer::GlobalAvgPool => accumulate(&mut grads[src], kernels::gap_backward(a, &g)),
            Layer::Softmax => {
                let dz = kernels::softmax_backward(record.values[id].data(), g.data());
                accumulate(&mut grads[src], Tensor::from_parts(a.shape().to_vec(), dz));
            }
        }
        // Keep the gradient at this value for feature-gradient queries.
        grads[id] = Some(g);
    }

    let params = want_params.then(|| {
        let mut out = Vec::new();
        for (i, node) in net.nodes().iter().enumerate() {
            if param_slots[i] == 0 {
                continue;
            }
            let (w, b) = match &node.layer {
                Layer::Conv2d(c) => (&c.weight, &c.bias),
                Layer::Dense(d) => (&d.weight, &d.bias),
                _ => unreachable!(),
            };
            match param_grads[i].take() {
                Some((gw, gb)) => {
                    out.push(gw);
                    out.push(gb);
                }
                None => {
                    out.push(Tensor::zeros(w.shape()));
                    out.push(Tensor::zeros(b.shape()));
                }
            }
        }
        out
    });
    if !want_input {
        grads[0] = None;
    }
    Ok(Gradients { values: grads, params })
}

/// `d objective / d x` under the chosen ReLU rule.
pub fn backward_input_grad<T: Scalar>(
    net: &Network<T>,
    record: &ForwardRecord<T>,
    objective: Objective,
    mode: BackpropMode,
) -> Result<Tensor<T>> {
    let grads = backward(net, record, objective, mode, false, true)?;
    Ok(grads.value(0, net.input_shape()))
}

/// Standard-mode gradient of `objective` w.r.t. the activations of `layer`,
/// which must be the input (`0`) or a convolution output.
pub fn backward_feature_grad<T: Scalar>(
    net: &Network<T>,
    record: &ForwardRecord<T>,
    layer: usize,
    objective: Objective,
) -> Result<Tensor<T>> {
    if layer > net.nodes().len() {
        return Err(Error::InvalidLayer(layer));
    }
    if layer != 0 && !net.is_conv_layer(layer) {
        return Err(Error::NotConvolutional(layer));
    }
    let grads = backward(net, record, objective, BackpropMode::Standard, false, layer == 0)?;
    Ok(grads.value(layer, net.value_shape(layer).expect("checked above")))
}

/// Maximum relative discrepancy between the analytic Standard-mode input
/// gradient and central differences with step `eps`.
pub fn gradient_check<T: Scalar>(net: &Network<T>, x: &Tensor<T>, objective: Objective, eps: T) -> Result<T> {
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {eps}")));
    }
    let record = forward(net, x)?;
    let analytic = backward_input_grad(net, &record, objective, BackpropMode::Standard)?;
    let floor = T::of(1e-12);
    let two = T::of(2.0);
    let mut probe = x.clone();
    let mut worst = T::zero();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = forward(net, &probe)?.objective_value(net, objective);
        probe.data_mut()[i] = orig - eps;
        let down = forward(net, &probe)?.objective_value(net, objective);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (two * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
