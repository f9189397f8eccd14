//! Saliency maps and Grad-CAM for original and adversarial images.
//!
//! A map of an adversarial image is the same computation applied to the
//! adversarial input; there is no separate code path.

mod grid;
mod io;

pub use grid::Grid;
pub use io::{read_map, read_map_csv, write_map, write_map_csv, MapHeader};

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, BackpropMode, Objective};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Saliency,
    GradCam,
}

impl MapKind {
    pub fn code(self) -> u8 {
        match self {
            MapKind::Saliency => 0,
            MapKind::GradCam => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(MapKind::Saliency),
            1 => Some(MapKind::GradCam),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            MapKind::Saliency => "sm",
            MapKind::GradCam => "gradcam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Original,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelReduction {
    /// Largest signed gradient across channels.
    #[default]
    SignedMax,
    /// Largest gradient magnitude across channels.
    AbsMax,
}

/// Which network output a map is differentiated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapOutput {
    /// Post-softmax confidence.
    #[default]
    SoftLabel,
    /// Pre-softmax score.
    Logit,
}

impl MapOutput {
    fn objective(self, label: usize) -> Objective {
        match self {
            MapOutput::SoftLabel => Objective::SoftLabel(label),
            MapOutput::Logit => Objective::Logit(label),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaliencyOptions {
    pub mode: BackpropMode,
    pub reduction: ChannelReduction,
    pub output: MapOutput,
}

impl Default for SaliencyOptions {
    fn default() -> Self {
        Self {
            mode: BackpropMode::Guided,
            reduction: ChannelReduction::SignedMax,
            output: MapOutput::SoftLabel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradCamOptions {
    /// Convolution output to explain; `None` uses the network default.
    pub layer: Option<usize>,
    /// Clamp the weighted activation sum at zero.
    pub relu: bool,
    pub output: MapOutput,
}

impl Default for GradCamOptions {
    fn default() -> Self {
        Self {
            layer: None,
            relu: true,
            output: MapOutput::SoftLabel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MapOptions {
    pub saliency: SaliencyOptions,
    pub gradcam: GradCamOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub kind: MapKind,
    /// Map at image resolution; raw until [`AttentionMap::normalized`].
    pub grid: Grid,
    /// Map at its computed resolution (the feature map for Grad-CAM).
    pub native: Grid,
    pub class: usize,
    pub source: Source,
    pub mode: BackpropMode,
    /// Grad-CAM source layer.
    pub layer: Option<usize>,
    /// `(min, max)` applied by normalization, if any.
    pub normalization: Option<(f64, f64)>,
}

impl AttentionMap {
    /// Min-max rescaled copy of `grid`; `native` is left untouched.
    pub fn normalized(&self) -> Self {
        let (grid, rec) = self.grid.normalized();
        Self {
            grid,
            normalization: Some(rec),
            ..self.clone()
        }
    }

    /// `grid` resampled to `(rows, cols)`; must not shrink.
    pub fn upsampled(&self, rows: usize, cols: usize) -> Result<Self> {
        Ok(Self {
            grid: self.grid.upsampled(rows, cols)?,
            ..self.clone()
        })
    }

    pub fn is_finalized(&self, rows: usize, cols: usize) -> bool {
        self.grid.dims() == (rows, cols)
            && self.normalization.is_some()
            && self.grid.data().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Min-max normalization of a map.
pub fn normalize(map: &AttentionMap) -> AttentionMap {
    map.normalized()
}

/// Bilinear, corner-aligned resampling of a map's grid.
pub fn upsample(map: &AttentionMap, rows: usize, cols: usize) -> Result<AttentionMap> {
    map.upsampled(rows, cols)
}

fn image_dims(net_shape: &[usize]) -> Result<(usize, usize, usize)> {
    match net_shape {
        [m, n, c] => Ok((*m, *n, *c)),
        other => Err(Error::InvalidArgument(format!("attention maps need [h, w, c] inputs, got {other:?}"))),
    }
}

/// Reduces an HWC gradient over channels.
pub fn reduce_channels<T: Scalar>(grad: &Tensor<T>, reduction: ChannelReduction) -> Result<Grid> {
    let (m, n, c) = image_dims(grad.shape())?;
    let data = grad
        .data()
        .chunks_exact(c)
        .map(|px| {
            px.iter()
                .map(|v| match reduction {
                    ChannelReduction::SignedMax => v.as_f64(),
                    ChannelReduction::AbsMax => v.as_f64().abs(),
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Grid::new(m, n, data)
}

/// Input-gradient saliency of class `label` under the chosen ReLU rule,
/// reduced over channels.
pub fn saliency_map<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    label: usize,
    source: Source,
    opts: &SaliencyOptions,
) -> Result<AttentionMap> {
    image_dims(net.input_shape())?;
    let record = autodiff::forward(net, image)?;
    let grad = autodiff::backward_input_grad(net, &record, opts.output.objective(label), opts.mode)?;
    let grid = reduce_channels(&grad, opts.reduction)?;
    Ok(AttentionMap {
        kind: MapKind::Saliency,
        native: grid.clone(),
        grid,
        class: label,
        source,
        mode: opts.mode,
        layer: None,
        normalization: None,
    })
}

/// Grad-CAM: channel weights are spatial means of the feature gradient,
/// the native map is the weighted channel sum of the layer's activations
/// (optionally clamped at zero) and `grid` is that map upsampled to the
/// image size.
pub fn grad_cam<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    label: usize,
    source: Source,
    opts: &GradCamOptions,
) -> Result<AttentionMap> {
    let (m, n, _) = image_dims(net.input_shape())?;
    let layer = match opts.layer {
        Some(l) => l,
        None => net
            .default_gradcam_layer()
            .ok_or_else(|| Error::InvalidNetwork("network has no convolution layer".into()))?,
    };
    if !net.is_conv_layer(layer) {
        return Err(if layer > net.nodes().len() {
            Error::InvalidLayer(layer)
        } else {
            Error::NotConvolutional(layer)
        });
    }
    let record = autodiff::forward(net, image)?;
    let fgrad = autodiff::backward_feature_grad(net, &record, layer, opts.output.objective(label))?;
    let acts = record.value(layer).expect("layer checked");
    let native = cam_from_features(acts, &fgrad, opts.relu)?;
    Ok(AttentionMap {
        kind: MapKind::GradCam,
        grid: native.upsampled(m, n)?,
        native,
        class: label,
        source,
        mode: BackpropMode::Standard,
        layer: Some(layer),
        normalization: None,
    })
}

/// Weighted channel sum with weights `mean_{h,w} grad[h, w, c]`.
pub fn cam_from_features<T: Scalar>(acts: &Tensor<T>, grad: &Tensor<T>, relu: bool) -> Result<Grid> {
    grad.expect_shape(acts.shape())?;
    let (h, w, c) = image_dims(acts.shape())?;
    let mut weights = vec![0.0f64; c];
    for px in grad.data().chunks_exact(c) {
        for (wt, v) in weights.iter_mut().zip(px) {
            *wt += v.as_f64();
        }
    }
    let area = (h * w) as f64;
    weights.iter_mut().for_each(|v| *v /= area);
    let data = acts
        .data()
        .chunks_exact(c)
        .map(|px| {
            let s: f64 = px.iter().zip(&weights).map(|(a, wt)| a.as_f64() * wt).sum();
            if relu {
                s.max(0.0)
            } else {
                s
            }
        })
        .collect();
    Grid::new(h, w, data)
}

/// One map of the requested kind with that kind's options.
pub fn attention_map<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    label: usize,
    source: Source,
    kind: MapKind,
    opts: &MapOptions,
) -> Result<AttentionMap> {
    match kind {
        MapKind::Saliency => saliency_map(net, image, label, source, &opts.saliency),
        MapKind::GradCam => grad_cam(net, image, label, source, &opts.gradcam),
    }
}

/// The four maps compared per adversarial pair, finalized (image size, normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct MapQuadruple {
    /// Prediction on the original image.
    pub class: usize,
    /// Prediction on the adversarial image.
    pub adversarial_class: usize,
    /// `M(x, C)`
    pub original_true: AttentionMap,
    /// `M(x, Ĉ)`
    pub original_adversarial: AttentionMap,
    /// `M(x̂, C)`
    pub adversarial_true: AttentionMap,
    /// `M(x̂, Ĉ)`
    pub adversarial_adversarial: AttentionMap,
}

impl MapQuadruple {
    pub fn maps(&self) -> [&AttentionMap; 4] {
        [
            &self.original_true,
            &self.original_adversarial,
            &self.adversarial_true,
            &self.adversarial_adversarial,
        ]
    }
}

/// Maps of `x` and `x̂` w.r.t. both predicted classes; rejects pairs whose
/// predictions agree.
pub fn map_quadruple<T: Scalar>(
    net: &Network<T>,
    original: &Tensor<T>,
    adversarial: &Tensor<T>,
    kind: MapKind,
    opts: &MapOptions,
) -> Result<MapQuadruple> {
    let c = autodiff::forward(net, original)?.predicted();
    let ac = autodiff::forward(net, adversarial)?.predicted();
    if c == ac {
        return Err(Error::NotAdversarial(c));
    }
    let one = |img: &Tensor<T>, label, source| attention_map(net, img, label, source, kind, opts).map(|m| m.normalized());
    Ok(MapQuadruple {
        class: c,
        adversarial_class: ac,
        original_true: one(original, c, Source::Original)?,
        original_adversarial: one(original, ac, Source::Original)?,
        adversarial_true: one(adversarial, c, Source::Adversarial)?,
        adversarial_adversarial: one(adversarial, ac, Source::Adversarial)?,
    })
}
