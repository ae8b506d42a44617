//! Micro neural-net engine: exact forward passes and gradients for a small,
//! fixed vocabulary of layer kinds, enough to train width-reduced CNN, MLP,
//! patch-embedding, squeeze-excite, and single-head-attention classifiers.
//!
//! Activations flow as `(N, H, W, C)` feature maps or `(N, F)` flat features.
//! All computation is f32, single-threaded, and bit-reproducible for a given
//! seed; batch-level parallel helpers live in [`crate::nn::eval`].

mod layers;
mod linalg;

pub mod eval;
pub mod io;
pub mod train;

pub(crate) use layers::{backward_full, forward_full, softmax_ce, Mode, Reduction};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archfeat::ArchFeatureRecord;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// One layer of a model, as written in model spec documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d {
        kernel: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "default_one")]
        groups: usize,
        out_channels: usize,
    },
    BatchNorm,
    LayerNorm,
    Relu,
    Gelu,
    Silu,
    LeakyRelu {
        #[serde(default = "default_slope")]
        negative_slope: f32,
    },
    MaxPool { kernel: usize, stride: usize },
    AvgPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    ResidualBegin,
    ResidualEnd,
    Patchify { kernel: usize, out_channels: usize },
    #[serde(rename = "self-attention-1h")]
    SelfAttention1h { token_dim: usize },
    SqueezeExcite {
        #[serde(default = "default_se_ratio")]
        reduction_ratio: usize,
    },
    Flatten,
}

fn default_one() -> usize {
    1
}
fn default_slope() -> f32 {
    0.01
}
fn default_se_ratio() -> usize {
    4
}

/// Static description of a model: layer chain, input resolution, class count,
/// and the categorical architecture-feature record used by downstream analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    /// `[height, width, channels]` of the expected input.
    pub input_resolution: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    pub arch_features: ArchFeatureRecord,
}

/// Shape of an activation between layers (per sample).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatShape {
    Map { h: usize, w: usize, c: usize },
    Flat { f: usize },
}

impl FeatShape {
    pub(crate) fn to_dims(self, n: usize) -> Vec<usize> {
        match self {
            FeatShape::Map { h, w, c } => vec![n, h, w, c],
            FeatShape::Flat { f } => vec![n, f],
        }
    }
}

fn shape_err(layer: usize, msg: impl Into<String>) -> Error {
    Error::Shape { layer, msg: msg.into() }
}

/// Computes the output shape of every layer, validating parameters, residual
/// balance, and the final logits shape. Errors carry the offending layer index.
pub fn chain_check(spec: &ModelSpec) -> Result<Vec<FeatShape>> {
    let [h, w, c] = spec.input_resolution;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Config(format!(
            "model {}: input resolution must be positive, got {:?}",
            spec.name, spec.input_resolution
        )));
    }
    if spec.num_classes < 2 {
        return Err(Error::Config(format!(
            "model {}: need at least 2 classes, got {}",
            spec.name, spec.num_classes
        )));
    }
    let mut cur = FeatShape::Map { h, w, c };
    let mut shapes = Vec::with_capacity(spec.layers.len());
    let mut residual: Vec<(usize, FeatShape)> = Vec::new();

    for (i, layer) in spec.layers.iter().enumerate() {
        let require_map = |cur: FeatShape, what: &str| -> Result<(usize, usize, usize)> {
            match cur {
                FeatShape::Map { h, w, c } => Ok((h, w, c)),
                FeatShape::Flat { .. } => {
                    Err(shape_err(i, format!("{what} expects a feature map, got flat features")))
                }
            }
        };
        cur = match *layer {
            LayerSpec::Dense { units } => match cur {
                FeatShape::Flat { .. } => {
                    if units == 0 {
                        return Err(shape_err(i, "dense units must be positive"));
                    }
                    FeatShape::Flat { f: units }
                }
                FeatShape::Map { .. } => {
                    return Err(shape_err(i, "dense expects flat features; add flatten or global-avg-pool first"))
                }
            },
            LayerSpec::Conv2d { kernel, stride, padding, groups, out_channels } => {
                let (h, w, c) = require_map(cur, "conv2d")?;
                conv_out_shape(i, h, w, c, kernel, stride, padding, groups, out_channels)?
            }
            LayerSpec::Patchify { kernel, out_channels } => {
                let (h, w, c) = require_map(cur, "patchify")?;
                conv_out_shape(i, h, w, c, kernel, kernel, 0, 1, out_channels)?
            }
            LayerSpec::BatchNorm | LayerSpec::LayerNorm => cur,
            LayerSpec::Relu | LayerSpec::Gelu | LayerSpec::Silu => cur,
            LayerSpec::LeakyRelu { negative_slope } => {
                if !negative_slope.is_finite() {
                    return Err(shape_err(i, "leaky-relu slope must be finite"));
                }
                cur
            }
            LayerSpec::MaxPool { kernel, stride } | LayerSpec::AvgPool { kernel, stride } => {
                let (h, w, c) = require_map(cur, "pool")?;
                if kernel == 0 || stride == 0 {
                    return Err(shape_err(i, "pool kernel and stride must be positive"));
                }
                if h < kernel || w < kernel {
                    return Err(shape_err(i, format!("pool kernel {kernel} larger than input {h}x{w}")));
                }
                FeatShape::Map {
                    h: (h - kernel) / stride + 1,
                    w: (w - kernel) / stride + 1,
                    c,
                }
            }
            LayerSpec::GlobalAvgPool => {
                let (_, _, c) = require_map(cur, "global-avg-pool")?;
                FeatShape::Flat { f: c }
            }
            LayerSpec::ResidualBegin => {
                residual.push((i, cur));
                cur
            }
            LayerSpec::ResidualEnd => {
                let (_, saved) = residual
                    .pop()
                    .ok_or_else(|| shape_err(i, "residual-end without matching residual-begin"))?;
                if saved != cur {
                    return Err(shape_err(
                        i,
                        format!("residual-end shape {cur:?} does not match residual-begin shape {saved:?}"),
                    ));
                }
                cur
            }
            LayerSpec::SelfAttention1h { token_dim } => {
                let (_, _, _) = require_map(cur, "self-attention-1h")?;
                if token_dim == 0 {
                    return Err(shape_err(i, "token_dim must be positive"));
                }
                cur
            }
            LayerSpec::SqueezeExcite { reduction_ratio } => {
                let (_, _, c) = require_map(cur, "squeeze-excite")?;
                if reduction_ratio == 0 || c % reduction_ratio != 0 {
                    return Err(shape_err(
                        i,
                        format!("squeeze-excite ratio {reduction_ratio} must divide channel count {c}"),
                    ));
                }
                cur
            }
            LayerSpec::Flatten => {
                let (h, w, c) = require_map(cur, "flatten")?;
                FeatShape::Flat { f: h * w * c }
            }
        };
        shapes.push(cur);
    }

    if let Some((i, _)) = residual.last() {
        return Err(shape_err(*i, "residual-begin without matching residual-end"));
    }
    match cur {
        FeatShape::Flat { f } if f == spec.num_classes => Ok(shapes),
        other => Err(Error::Config(format!(
            "model {}: final layer produces {other:?}, expected flat {} logits",
            spec.name, spec.num_classes
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_out_shape(
    i: usize,
    h: usize,
    w: usize,
    c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    out_channels: usize,
) -> Result<FeatShape> {
    if kernel == 0 || stride == 0 || groups == 0 || out_channels == 0 {
        return Err(shape_err(i, "conv kernel, stride, groups, out_channels must be positive"));
    }
    if c % groups != 0 || out_channels % groups != 0 {
        return Err(shape_err(
            i,
            format!("groups {groups} must divide in_channels {c} and out_channels {out_channels}"),
        ));
    }
    let eh = h + 2 * padding;
    let ew = w + 2 * padding;
    if eh < kernel || ew < kernel {
        return Err(shape_err(i, format!("kernel {kernel} larger than padded input {eh}x{ew}")));
    }
    Ok(FeatShape::Map {
        h: (eh - kernel) / stride + 1,
        w: (ew - kernel) / stride + 1,
        c: out_channels,
    })
}

/// Role of a parameter tensor: drives init, weight decay, and updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense/conv/attention kernel: Kaiming-uniform init, weight decay applies.
    Kernel,
    /// Additive bias: zero init, no decay.
    Bias,
    /// Norm gain: ones init, no decay.
    Gain,
    /// Norm shift: zero init, no decay.
    Shift,
    /// Running statistic: not touched by the optimizer.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Enumerates every parameter tensor of a model, in layer order.
pub fn param_specs(spec: &ModelSpec) -> Result<Vec<ParamSpec>> {
    let shapes = chain_check(spec)?;
    let mut out = Vec::new();
    let mut push = |i: usize, suffix: &str, shape: Vec<usize>, kind: ParamKind| {
        out.push(ParamSpec { name: param_name(i, suffix), shape, kind });
    };
    let [h0, w0, c0] = spec.input_resolution;
    let mut cur = FeatShape::Map { h: h0, w: w0, c: c0 };
    for (i, layer) in spec.layers.iter().enumerate() {
        match (layer.clone(), cur) {
            (LayerSpec::Dense { units }, FeatShape::Flat { f }) => {
                push(i, "weight", vec![f, units], ParamKind::Kernel);
                push(i, "bias", vec![units], ParamKind::Bias);
            }
            (LayerSpec::Conv2d { kernel, groups, out_channels, .. }, FeatShape::Map { c, .. }) => {
                push(i, "weight", vec![kernel, kernel, c / groups, out_channels], ParamKind::Kernel);
                push(i, "bias", vec![out_channels], ParamKind::Bias);
            }
            (LayerSpec::Patchify { kernel, out_channels }, FeatShape::Map { c, .. }) => {
                push(i, "weight", vec![kernel, kernel, c, out_channels], ParamKind::Kernel);
                push(i, "bias", vec![out_channels], ParamKind::Bias);
            }
            (LayerSpec::BatchNorm, shape) => {
                let c = channels_of(shape);
                push(i, "gamma", vec![c], ParamKind::Gain);
                push(i, "beta", vec![c], ParamKind::Shift);
                push(i, "running_mean", vec![c], ParamKind::Buffer);
                push(i, "running_var", vec![c], ParamKind::Buffer);
            }
            (LayerSpec::LayerNorm, shape) => {
                let c = channels_of(shape);
                push(i, "gamma", vec![c], ParamKind::Gain);
                push(i, "beta", vec![c], ParamKind::Shift);
            }
            (LayerSpec::SelfAttention1h { token_dim }, FeatShape::Map { c, .. }) => {
                push(i, "wq", vec![c, token_dim], ParamKind::Kernel);
                push(i, "wk", vec![c, token_dim], ParamKind::Kernel);
                push(i, "wv", vec![c, c], ParamKind::Kernel);
            }
            (LayerSpec::SqueezeExcite { reduction_ratio }, FeatShape::Map { c, .. }) => {
                let hid = c / reduction_ratio;
                push(i, "fc1.weight", vec![c, hid], ParamKind::Kernel);
                push(i, "fc1.bias", vec![hid], ParamKind::Bias);
                push(i, "fc2.weight", vec![hid, c], ParamKind::Kernel);
                push(i, "fc2.bias", vec![c], ParamKind::Bias);
            }
            _ => {}
        }
        cur = shapes[i];
    }
    Ok(out)
}

pub(crate) fn param_name(layer: usize, suffix: &str) -> String {
    format!("layer{layer:02}.{suffix}")
}

fn channels_of(shape: FeatShape) -> usize {
    match shape {
        FeatShape::Map { c, .. } => c,
        FeatShape::Flat { f } => f,
    }
}

/// Echo of how a model was trained, stored alongside the weights.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainingMeta {
    pub config: train::TrainConfig,
    pub final_clean_accuracy: Option<f64>,
    pub final_train_loss: Option<f64>,
}

/// A trained (or freshly initialized) classifier: spec plus parameter tensors.
///
/// Models are immutable after construction; attacks and evaluation never
/// mutate weights or running statistics.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    shapes: Vec<FeatShape>,
    weights: BTreeMap<String, Tensor>,
    meta: TrainingMeta,
}

impl Model {
    /// Fresh model with seeded Kaiming-uniform kernels, zero biases, and unit
    /// norm gains. Every parameter draws from its own named random stream, so
    /// adding layers does not shift the init of earlier ones.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Model> {
        let shapes = chain_check(&spec)?;
        let mut weights = BTreeMap::new();
        for p in param_specs(&spec)? {
            let numel: usize = p.shape.iter().product();
            let data = match p.kind {
                ParamKind::Kernel => {
                    let fan_in: usize = p.shape[..p.shape.len() - 1].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    let mut rng = rng::stream(seed, &format!("init/{}", p.name), 0);
                    (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect()
                }
                ParamKind::Bias | ParamKind::Shift => vec![0.0; numel],
                ParamKind::Gain => vec![1.0; numel],
                ParamKind::Buffer => {
                    if p.name.ends_with("running_var") {
                        vec![1.0; numel]
                    } else {
                        vec![0.0; numel]
                    }
                }
            };
            weights.insert(p.name, Tensor::from_parts(p.shape, data));
        }
        let meta = TrainingMeta {
            config: train::TrainConfig { seed, ..train::TrainConfig::default() },
            final_clean_accuracy: None,
            final_train_loss: None,
        };
        Ok(Model { spec, shapes, weights, meta })
    }

    /// Builds a model from a spec and an explicit weight map. Every
    /// parameter listed by [`param_specs`] must be present with its exact
    /// shape.
    pub fn from_parts(
        spec: ModelSpec,
        weights: BTreeMap<String, Tensor>,
        meta: TrainingMeta,
    ) -> Result<Model> {
        let shapes = chain_check(&spec)?;
        for p in param_specs(&spec)? {
            let t = weights
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.shape
                )));
            }
        }
        Ok(Model { spec, shapes, weights, meta })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_resolution(&self) -> [usize; 3] {
        self.spec.input_resolution
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor> {
        &self.weights
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub(crate) fn shapes(&self) -> &[FeatShape] {
        &self.shapes
    }

    pub(crate) fn weights_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.weights
    }

    pub(crate) fn set_meta(&mut self, meta: TrainingMeta) {
        self.meta = meta;
    }

    /// Inference-mode logits for a batch shaped `(N, H, W, C)` matching the
    /// spec resolution. Norm layers use stored statistics.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (logits, _) = forward_full(self, images, Mode::Infer)?;
        Ok(logits)
    }

    /// Gradient of the summed cross-entropy loss with respect to the input
    /// pixels, in inference mode. Per-sample rows are independent of batch
    /// composition, so any grouping of samples yields identical gradients.
    pub fn input_gradient(&self, images: &Tensor, labels: &[usize]) -> Result<Tensor> {
        if images.n() != labels.len() {
            return Err(Error::Config(format!(
                "input_gradient: {} images vs {} labels",
                images.n(),
                labels.len()
            )));
        }
        let (logits, trace) = forward_full(self, images, Mode::Infer)?;
        let (_, dlogits) = softmax_ce(&logits, labels, Reduction::Sum);
        let (dx, _) = backward_full(self, &trace, dlogits, Mode::Infer, false)?;
        Ok(dx)
    }
}

/// Summed cross-entropy loss in inference mode: the scalar whose input
/// gradient [`Model::input_gradient`] computes.
pub fn inference_loss_sum(model: &Model, images: &Tensor, labels: &[usize]) -> Result<f64> {
    let (logits, _) = forward_full(model, images, Mode::Infer)?;
    let (loss, _) = softmax_ce(&logits, labels, Reduction::Sum);
    Ok(loss)
}

/// Mean cross-entropy loss of a labeled batch in training mode (batch-norm
/// layers use batch statistics). Exposed for optimizer diagnostics and
/// gradient verification.
pub fn training_loss(model: &Model, images: &Tensor, labels: &[usize]) -> Result<f64> {
    let (logits, _) = forward_full(model, images, Mode::Train)?;
    let (loss, _) = softmax_ce(&logits, labels, Reduction::Mean);
    Ok(loss)
}

/// Training-mode loss together with the gradient of every learnable
/// parameter, exactly as the optimizer sees them.
pub fn training_gradients(
    model: &Model,
    images: &Tensor,
    labels: &[usize],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let (logits, trace) = forward_full(model, images, Mode::Train)?;
    let (loss, dlogits) = softmax_ce(&logits, labels, Reduction::Mean);
    let (_, grads) = backward_full(model, &trace, dlogits, Mode::Train, true)?;
    Ok((loss, grads))
}
