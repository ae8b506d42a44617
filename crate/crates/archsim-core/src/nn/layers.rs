//! Forward and backward passes for every layer kind.
//!
//! The backward pass is exact (no numeric differentiation anywhere). Traces
//! store per-layer inputs plus the small per-layer caches needed to avoid
//! recomputing softmax rows, pooling argmaxes, and norm statistics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{param_name, FeatShape, LayerSpec, Model};

pub(crate) const NORM_EPS: f32 = 1e-5;
/// Fraction of the batch statistic folded into running statistics per step.
pub(crate) const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Batch-norm uses stored running statistics; nothing is recorded.
    Infer,
    /// Batch-norm normalizes with batch statistics and records them.
    Train,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Reduction {
    Sum,
    Mean,
}

pub(crate) enum Aux {
    None,
    /// Batch statistics used for normalization (training mode).
    BatchNorm { mean: Vec<f32>, var: Vec<f32> },
    /// Per-position mean and variance over the normalized axis.
    LayerNorm { mean: Vec<f32>, var: Vec<f32> },
    /// Flat input index of each window maximum.
    MaxPool { argmax: Vec<u32> },
    /// Query/key/value projections and softmax rows, per sample.
    Attn { q: Vec<f32>, k: Vec<f32>, v: Vec<f32>, p: Vec<f32> },
    /// Pooled vector, hidden pre-activation, hidden, and sigmoid gates.
    Se { pooled: Vec<f32>, h_pre: Vec<f32>, h: Vec<f32>, g: Vec<f32> },
}

pub(crate) struct Trace {
    /// `inputs[i]` is the activation entering layer `i`.
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) aux: Vec<Aux>,
}

impl Trace {
    /// Batch statistics recorded by a training-mode batch-norm layer.
    pub(crate) fn bn_stats(&self, layer: usize) -> Option<(&[f32], &[f32])> {
        match &self.aux[layer] {
            Aux::BatchNorm { mean, var } => Some((mean, var)),
            _ => None,
        }
    }
}

fn weight<'a>(model: &'a Model, layer: usize, suffix: &str) -> &'a Tensor {
    model
        .weights()
        .get(&param_name(layer, suffix))
        .unwrap_or_else(|| panic!("missing parameter {}", param_name(layer, suffix)))
}

fn check_finite(layer: usize, data: &[f32], context: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer, context: context.into() })
    }
}

/// Runs the full forward pass, returning logits and the backward trace.
pub(crate) fn forward_full(model: &Model, images: &Tensor, mode: Mode) -> Result<(Tensor, Trace)> {
    let [h, w, c] = model.input_resolution();
    if images.shape() != [images.n(), h, w, c] {
        return Err(Error::Config(format!(
            "model {} expects input ({h}, {w}, {c}), got {:?}",
            model.name(),
            &images.shape()[1..]
        )));
    }
    if images.n() == 0 {
        return Err(Error::EmptyBatch("forward on empty batch".into()));
    }
    let n = images.n();
    let mut inputs: Vec<Tensor> = Vec::with_capacity(model.spec().layers.len());
    let mut aux: Vec<Aux> = Vec::with_capacity(model.spec().layers.len());
    let mut residual: Vec<usize> = Vec::new();
    let mut cur = images.clone();
    let mut cur_shape = FeatShape::Map { h, w, c };

    for (i, layer) in model.spec().layers.iter().enumerate() {
        inputs.push(cur);
        let x = &inputs[i];
        let out_shape = model.shapes()[i];
        let (out, a) = match *layer {
            LayerSpec::Dense { units } => {
                let f = x.sample_numel();
                let wt = weight(model, i, "weight");
                let b = weight(model, i, "bias");
                let mut out = vec![0.0f32; n * units];
                matmul_acc(x.data(), wt.data(), n, f, units, &mut out);
                for row in out.chunks_exact_mut(units) {
                    for (o, &bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                (Tensor::from_parts(vec![n, units], out), Aux::None)
            }
            LayerSpec::Conv2d { kernel, stride, padding, groups, out_channels } => {
                let (ih, iw, ic) = map_dims(cur_shape);
                let out = conv_forward(
                    x.data(), n, ih, iw, ic, kernel, stride, padding, groups, out_channels,
                    weight(model, i, "weight").data(),
                    weight(model, i, "bias").data(),
                );
                (Tensor::from_parts(out_shape.to_dims(n), out), Aux::None)
            }
            LayerSpec::Patchify { kernel, out_channels } => {
                let (ih, iw, ic) = map_dims(cur_shape);
                let out = conv_forward(
                    x.data(), n, ih, iw, ic, kernel, kernel, 0, 1, out_channels,
                    weight(model, i, "weight").data(),
                    weight(model, i, "bias").data(),
                );
                (Tensor::from_parts(out_shape.to_dims(n), out), Aux::None)
            }
            LayerSpec::BatchNorm => batch_norm_forward(model, i, x, cur_shape, mode),
            LayerSpec::LayerNorm => layer_norm_forward(model, i, x, cur_shape),
            LayerSpec::Relu => (map_unary(x, |v| v.max(0.0)), Aux::None),
            LayerSpec::LeakyRelu { negative_slope } => {
                (map_unary(x, move |v| if v > 0.0 { v } else { negative_slope * v }), Aux::None)
            }
            LayerSpec::Gelu => (map_unary(x, gelu), Aux::None),
            LayerSpec::Silu => (map_unary(x, |v| v * sigmoid(v)), Aux::None),
            LayerSpec::MaxPool { kernel, stride } => {
                let (ih, iw, ic) = map_dims(cur_shape);
                max_pool_forward(x, n, ih, iw, ic, kernel, stride, out_shape)
            }
            LayerSpec::AvgPool { kernel, stride } => {
                let (ih, iw, ic) = map_dims(cur_shape);
                (avg_pool_forward(x, n, ih, iw, ic, kernel, stride, out_shape), Aux::None)
            }
            LayerSpec::GlobalAvgPool => {
                let (ih, iw, ic) = map_dims(cur_shape);
                (global_avg_pool_forward(x, n, ih, iw, ic), Aux::None)
            }
            LayerSpec::ResidualBegin => {
                residual.push(i);
                (x.clone(), Aux::None)
            }
            LayerSpec::ResidualEnd => {
                let bi = residual.pop().expect("chain_check guarantees balance");
                let saved = &inputs[bi];
                let mut out = x.data().to_vec();
                for (o, &s) in out.iter_mut().zip(saved.data()) {
                    *o += s;
                }
                (Tensor::from_parts(out_shape.to_dims(n), out), Aux::None)
            }
            LayerSpec::SelfAttention1h { token_dim } => {
                let (ih, iw, ic) = map_dims(cur_shape);
                attention_forward(model, i, x, n, ih * iw, ic, token_dim)
            }
            LayerSpec::SqueezeExcite { reduction_ratio } => {
                let (ih, iw, ic) = map_dims(cur_shape);
                squeeze_excite_forward(model, i, x, n, ih, iw, ic, reduction_ratio)
            }
            LayerSpec::Flatten => {
                (Tensor::from_parts(out_shape.to_dims(n), x.data().to_vec()), Aux::None)
            }
        };
        check_finite(i, out.data(), "forward output")?;
        aux.push(a);
        cur = out;
        cur_shape = out_shape;
    }
    Ok((cur, Trace { inputs, aux }))
}

/// Backpropagates `dlogits` through the model. Returns the input gradient and,
/// when `want_params` is set, gradients for every trainable parameter.
pub(crate) fn backward_full(
    model: &Model,
    trace: &Trace,
    dlogits: Tensor,
    mode: Mode,
    want_params: bool,
) -> Result<(Tensor, BTreeMap<String, Tensor>)> {
    let n = dlogits.n();
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut g = dlogits;
    // Gradients waiting to be merged at their residual-begin layer.
    let mut skip_grads: Vec<Tensor> = Vec::new();

    for (i, layer) in model.spec().layers.iter().enumerate().rev() {
        let x = &trace.inputs[i];
        let in_shape = if i == 0 {
            let [h, w, c] = model.input_resolution();
            FeatShape::Map { h, w, c }
        } else {
            model.shapes()[i - 1]
        };
        g = match *layer {
            LayerSpec::Dense { units } => {
                let f = x.sample_numel();
                let wt = weight(model, i, "weight");
                if want_params {
                    let mut dw = vec![0.0f32; f * units];
                    matmul_tn_acc(x.data(), g.data(), f, n, units, &mut dw);
                    let mut db = vec![0.0f32; units];
                    for row in g.data().chunks_exact(units) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    grads.insert(param_name(i, "weight"), Tensor::from_parts(vec![f, units], dw));
                    grads.insert(param_name(i, "bias"), Tensor::from_parts(vec![units], db));
                }
                let mut dx = vec![0.0f32; n * f];
                matmul_nt_acc(g.data(), wt.data(), n, units, f, &mut dx);
                Tensor::from_parts(in_shape.to_dims(n), dx)
            }
            LayerSpec::Conv2d { kernel, stride, padding, groups, out_channels } => {
                let (ih, iw, ic) = map_dims(in_shape);
                conv_backward(
                    model, i, x, &g, n, ih, iw, ic, kernel, stride, padding, groups, out_channels,
                    want_params, &mut grads,
                )
            }
            LayerSpec::Patchify { kernel, out_channels } => {
                let (ih, iw, ic) = map_dims(in_shape);
                conv_backward(
                    model, i, x, &g, n, ih, iw, ic, kernel, kernel, 0, 1, out_channels,
                    want_params, &mut grads,
                )
            }
            LayerSpec::BatchNorm => {
                batch_norm_backward(model, i, x, &g, in_shape, mode, trace, want_params, &mut grads)
            }
            LayerSpec::LayerNorm => {
                layer_norm_backward(model, i, x, &g, in_shape, trace, want_params, &mut grads)
            }
            LayerSpec::Relu => mul_derivative(x, &g, |v| if v > 0.0 { 1.0 } else { 0.0 }),
            LayerSpec::LeakyRelu { negative_slope } => {
                mul_derivative(x, &g, move |v| if v > 0.0 { 1.0 } else { negative_slope })
            }
            LayerSpec::Gelu => mul_derivative(x, &g, gelu_derivative),
            LayerSpec::Silu => mul_derivative(x, &g, |v| {
                let s = sigmoid(v);
                s * (1.0 + v * (1.0 - s))
            }),
            LayerSpec::MaxPool { .. } => {
                let Aux::MaxPool { argmax } = &trace.aux[i] else { unreachable!() };
                max_pool_backward(&g, argmax, in_shape, n)
            }
            LayerSpec::AvgPool { kernel, stride } => {
                let (ih, iw, ic) = map_dims(in_shape);
                avg_pool_backward(&g, n, ih, iw, ic, kernel, stride)
            }
            LayerSpec::GlobalAvgPool => {
                let (ih, iw, ic) = map_dims(in_shape);
                let mut dx = vec![0.0f32; n * ih * iw * ic];
                let inv = 1.0 / (ih * iw) as f32;
                for s in 0..n {
                    let grow = &g.data()[s * ic..(s + 1) * ic];
                    let drow = &mut dx[s * ih * iw * ic..(s + 1) * ih * iw * ic];
                    for pos in drow.chunks_exact_mut(ic) {
                        for (d, &gv) in pos.iter_mut().zip(grow) {
                            *d = gv * inv;
                        }
                    }
                }
                Tensor::from_parts(in_shape.to_dims(n), dx)
            }
            LayerSpec::ResidualBegin => {
                let skip = skip_grads.pop().expect("chain_check guarantees balance");
                let mut dx = g.data().to_vec();
                for (d, &s) in dx.iter_mut().zip(skip.data()) {
                    *d += s;
                }
                Tensor::from_parts(in_shape.to_dims(n), dx)
            }
            LayerSpec::ResidualEnd => {
                skip_grads.push(g.clone());
                Tensor::from_parts(in_shape.to_dims(n), g.data().to_vec())
            }
            LayerSpec::SelfAttention1h { token_dim } => {
                let (ih, iw, ic) = map_dims(in_shape);
                attention_backward(
                    model, i, x, &g, n, ih * iw, ic, token_dim, trace, want_params, &mut grads,
                )
            }
            LayerSpec::SqueezeExcite { reduction_ratio } => {
                let (ih, iw, ic) = map_dims(in_shape);
                squeeze_excite_backward(
                    model, i, x, &g, n, ih, iw, ic, reduction_ratio, trace, want_params, &mut grads,
                )
            }
            LayerSpec::Flatten => Tensor::from_parts(in_shape.to_dims(n), g.data().to_vec()),
        };
        check_finite(i, g.data(), "backward gradient")?;
    }
    Ok((g, grads))
}

/// Numerically stable softmax cross-entropy. Returns the total (or mean) loss
/// and the gradient with respect to the logits.
pub(crate) fn softmax_ce(logits: &Tensor, labels: &[usize], reduction: Reduction) -> (f64, Tensor) {
    let n = logits.n();
    let k = logits.sample_numel();
    debug_assert_eq!(n, labels.len());
    let mut dlogits = vec![0.0f32; n * k];
    let mut loss = 0.0f64;
    let scale = match reduction {
        Reduction::Sum => 1.0f32,
        Reduction::Mean => 1.0 / n as f32,
    };
    for s in 0..n {
        let row = logits.sample(s);
        let y = labels[s];
        debug_assert!(y < k, "label {y} out of range for {k} classes");
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0f32;
        for &v in row {
            sum += (v - m).exp();
        }
        let lse = m + sum.ln();
        loss += (lse - row[y]) as f64;
        let drow = &mut dlogits[s * k..(s + 1) * k];
        for (j, (d, &v)) in drow.iter_mut().zip(row).enumerate() {
            let p = (v - lse).exp();
            *d = (p - if j == y { 1.0 } else { 0.0 }) * scale;
        }
    }
    if matches!(reduction, Reduction::Mean) {
        loss /= n as f64;
    }
    (loss, Tensor::from_parts(vec![n, k], dlogits))
}

// ---------------------------------------------------------------------------
// elementwise

fn map_unary(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

fn mul_derivative(x: &Tensor, g: &Tensor, d: impl Fn(f32) -> f32) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xv, &gv)| gv * d(xv))
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
fn gelu(v: f32) -> f32 {
    0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh())
}

fn gelu_derivative(v: f32) -> f32 {
    let u = GELU_C * (v + GELU_A * v * v * v);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * v * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
}

fn map_dims(shape: FeatShape) -> (usize, usize, usize) {
    match shape {
        FeatShape::Map { h, w, c } => (h, w, c),
        FeatShape::Flat { .. } => unreachable!("chain_check rejects flat input here"),
    }
}

// ---------------------------------------------------------------------------
// convolution

fn conv_out_dims(h: usize, w: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
}

/// Gathers padded input windows for one channel group into a
/// `(n*oh*ow) x (k*k*cpg)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    s: usize,
    p: usize,
    c0: usize,
    cpg: usize,
) -> Vec<f32> {
    let (oh, ow) = conv_out_dims(h, w, k, s, p);
    let row_len = k * k * cpg;
    let mut cols = vec![0.0f32; n * oh * ow * row_len];
    for sn in 0..n {
        let xs = &x[sn * h * w * cin..(sn + 1) * h * w * cin];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((sn * oh + oy) * ow + ox) * row_len;
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((iy as usize * w) + ix as usize) * cin + c0;
                        let dst = row + (ky * k + kx) * cpg;
                        cols[dst..dst + cpg].copy_from_slice(&xs[src..src + cpg]);
                    }
                }
            }
        }
    }
    cols
}

/// Scatters column gradients back onto the (padded) input.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &[f32],
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    s: usize,
    p: usize,
    c0: usize,
    cpg: usize,
    dx: &mut [f32],
) {
    let (oh, ow) = conv_out_dims(h, w, k, s, p);
    let row_len = k * k * cpg;
    for sn in 0..n {
        let dxs = &mut dx[sn * h * w * cin..(sn + 1) * h * w * cin];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((sn * oh + oy) * ow + ox) * row_len;
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((iy as usize * w) + ix as usize) * cin + c0;
                        let src = row + (ky * k + kx) * cpg;
                        for c in 0..cpg {
                            dxs[dst + c] += dcols[src + c];
                        }
                    }
                }
            }
        }
    }
}

/// Extracts the `(k*k*cpg) x opg` weight matrix of one group from the packed
/// `(k, k, cpg, cout)` kernel tensor.
fn group_weight(wt: &[f32], k: usize, cpg: usize, cout: usize, g: usize, opg: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; k * k * cpg * opg];
    for r in 0..k * k * cpg {
        let src = r * cout + g * opg;
        out[r * opg..(r + 1) * opg].copy_from_slice(&wt[src..src + opg]);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f32],
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    s: usize,
    p: usize,
    groups: usize,
    cout: usize,
    wt: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let (oh, ow) = conv_out_dims(h, w, k, s, p);
    let cpg = cin / groups;
    let opg = cout / groups;
    let rows = n * oh * ow;
    let mut out = vec![0.0f32; rows * cout];
    for g in 0..groups {
        let cols = im2col(x, n, h, w, cin, k, s, p, g * cpg, cpg);
        let wg = if groups == 1 {
            None
        } else {
            Some(group_weight(wt, k, cpg, cout, g, opg))
        };
        let wslice = wg.as_deref().unwrap_or(wt);
        if groups == 1 {
            matmul_acc(&cols, wslice, rows, k * k * cpg, cout, &mut out);
        } else {
            let mut block = vec![0.0f32; rows * opg];
            matmul_acc(&cols, wslice, rows, k * k * cpg, opg, &mut block);
            for r in 0..rows {
                out[r * cout + g * opg..r * cout + (g + 1) * opg]
                    .copy_from_slice(&block[r * opg..(r + 1) * opg]);
            }
        }
    }
    for row in out.chunks_exact_mut(cout) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    model: &Model,
    i: usize,
    x: &Tensor,
    g: &Tensor,
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    s: usize,
    p: usize,
    groups: usize,
    cout: usize,
    want_params: bool,
    grads: &mut BTreeMap<String, Tensor>,
) -> Tensor {
    let (oh, ow) = conv_out_dims(h, w, k, s, p);
    let cpg = cin / groups;
    let opg = cout / groups;
    let rows = n * oh * ow;
    let wt = weight(model, i, "weight");
    let mut dx = vec![0.0f32; n * h * w * cin];
    let mut dw = if want_params { vec![0.0f32; k * k * cpg * cout] } else { Vec::new() };

    for grp in 0..groups {
        // Output-channel block of this group, gathered contiguously.
        let mut dout_g = vec![0.0f32; rows * opg];
        for r in 0..rows {
            dout_g[r * opg..(r + 1) * opg]
                .copy_from_slice(&g.data()[r * cout + grp * opg..r * cout + (grp + 1) * opg]);
        }
        let wg = group_weight(wt.data(), k, cpg, cout, grp, opg);

        let mut dcols = vec![0.0f32; rows * k * k * cpg];
        matmul_nt_acc(&dout_g, &wg, rows, opg, k * k * cpg, &mut dcols);
        col2im(&dcols, n, h, w, cin, k, s, p, grp * cpg, cpg, &mut dx);

        if want_params {
            let cols = im2col(x.data(), n, h, w, cin, k, s, p, grp * cpg, cpg);
            let mut dwg = vec![0.0f32; k * k * cpg * opg];
            matmul_tn_acc(&cols, &dout_g, k * k * cpg, rows, opg, &mut dwg);
            for r in 0..k * k * cpg {
                dw[r * cout + grp * opg..r * cout + (grp + 1) * opg]
                    .copy_from_slice(&dwg[r * opg..(r + 1) * opg]);
            }
        }
    }
    if want_params {
        let mut db = vec![0.0f32; cout];
        for row in g.data().chunks_exact(cout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        grads.insert(param_name(i, "weight"), Tensor::from_parts(vec![k, k, cpg, cout], dw));
        grads.insert(param_name(i, "bias"), Tensor::from_parts(vec![cout], db));
    }
    Tensor::from_parts(vec![n, h, w, cin], dx)
}

// ---------------------------------------------------------------------------
// normalization

/// Channel count and positions-per-channel for a norm layer input.
fn norm_geometry(shape: FeatShape, n: usize) -> (usize, usize) {
    match shape {
        FeatShape::Map { h, w, c } => (c, n * h * w),
        FeatShape::Flat { f } => (f, n),
    }
}

fn batch_norm_forward(
    model: &Model,
    i: usize,
    x: &Tensor,
    shape: FeatShape,
    mode: Mode,
) -> (Tensor, Aux) {
    let n = x.n();
    let (c, m) = norm_geometry(shape, n);
    let gamma = weight(model, i, "gamma").data();
    let beta = weight(model, i, "beta").data();
    let (mean, var) = match mode {
        Mode::Infer => (
            weight(model, i, "running_mean").data().to_vec(),
            weight(model, i, "running_var").data().to_vec(),
        ),
        Mode::Train => {
            let mut mean = vec![0.0f32; c];
            for pos in x.data().chunks_exact(c) {
                for (acc, &v) in mean.iter_mut().zip(pos) {
                    *acc += v;
                }
            }
            for acc in &mut mean {
                *acc /= m as f32;
            }
            let mut var = vec![0.0f32; c];
            for pos in x.data().chunks_exact(c) {
                for ((acc, &v), &mu) in var.iter_mut().zip(pos).zip(&mean) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
            for acc in &mut var {
                *acc /= m as f32;
            }
            (mean, var)
        }
    };
    let mut out = Vec::with_capacity(x.numel());
    let scale: Vec<f32> = gamma
        .iter()
        .zip(&var)
        .map(|(&gm, &v)| gm / (v + NORM_EPS).sqrt())
        .collect();
    for pos in x.data().chunks_exact(c) {
        for j in 0..c {
            out.push((pos[j] - mean[j]) * scale[j] + beta[j]);
        }
    }
    let aux = match mode {
        Mode::Train => Aux::BatchNorm { mean, var },
        Mode::Infer => Aux::None,
    };
    (Tensor::from_parts(x.shape().to_vec(), out), aux)
}

#[allow(clippy::too_many_arguments)]
fn batch_norm_backward(
    model: &Model,
    i: usize,
    x: &Tensor,
    g: &Tensor,
    shape: FeatShape,
    mode: Mode,
    trace: &Trace,
    want_params: bool,
    grads: &mut BTreeMap<String, Tensor>,
) -> Tensor {
    let n = x.n();
    let (c, m) = norm_geometry(shape, n);
    let gamma = weight(model, i, "gamma").data();
    match mode {
        Mode::Infer => {
            // Stored statistics are constants: the layer is a per-channel affine map.
            let var = weight(model, i, "running_var").data();
            let mean = weight(model, i, "running_mean").data();
            let scale: Vec<f32> = gamma
                .iter()
                .zip(var)
                .map(|(&gm, &v)| gm / (v + NORM_EPS).sqrt())
                .collect();
            if want_params {
                let inv_std: Vec<f32> =
                    var.iter().map(|&v| 1.0 / (v + NORM_EPS).sqrt()).collect();
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for (pos, gpos) in x.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
                    for j in 0..c {
                        dgamma[j] += gpos[j] * (pos[j] - mean[j]) * inv_std[j];
                        dbeta[j] += gpos[j];
                    }
                }
                grads.insert(param_name(i, "gamma"), Tensor::from_parts(vec![c], dgamma));
                grads.insert(param_name(i, "beta"), Tensor::from_parts(vec![c], dbeta));
            }
            let mut dx = Vec::with_capacity(x.numel());
            for gpos in g.data().chunks_exact(c) {
                for j in 0..c {
                    dx.push(gpos[j] * scale[j]);
                }
            }
            Tensor::from_parts(x.shape().to_vec(), dx)
        }
        Mode::Train => {
            let (mean, var) = trace.bn_stats(i).expect("training trace has batch stats");
            let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + NORM_EPS).sqrt()).collect();
            let mut sum_dy = vec![0.0f32; c];
            let mut sum_dy_xhat = vec![0.0f32; c];
            for (pos, gpos) in x.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
                for j in 0..c {
                    let xhat = (pos[j] - mean[j]) * inv_std[j];
                    sum_dy[j] += gpos[j];
                    sum_dy_xhat[j] += gpos[j] * xhat;
                }
            }
            if want_params {
                grads.insert(
                    param_name(i, "gamma"),
                    Tensor::from_parts(vec![c], sum_dy_xhat.clone()),
                );
                grads.insert(param_name(i, "beta"), Tensor::from_parts(vec![c], sum_dy.clone()));
            }
            let inv_m = 1.0 / m as f32;
            let mut dx = Vec::with_capacity(x.numel());
            for (pos, gpos) in x.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
                for j in 0..c {
                    let xhat = (pos[j] - mean[j]) * inv_std[j];
                    let v = gamma[j]
                        * inv_std[j]
                        * (gpos[j] - inv_m * sum_dy[j] - xhat * inv_m * sum_dy_xhat[j]);
                    dx.push(v);
                }
            }
            Tensor::from_parts(x.shape().to_vec(), dx)
        }
    }
}

fn layer_norm_forward(model: &Model, i: usize, x: &Tensor, shape: FeatShape) -> (Tensor, Aux) {
    let n = x.n();
    let (c, positions) = norm_geometry(shape, n);
    let gamma = weight(model, i, "gamma").data();
    let beta = weight(model, i, "beta").data();
    let mut mean = Vec::with_capacity(positions);
    let mut var = Vec::with_capacity(positions);
    let mut out = Vec::with_capacity(x.numel());
    for pos in x.data().chunks_exact(c) {
        let mu = pos.iter().sum::<f32>() / c as f32;
        let v = pos.iter().map(|&p| (p - mu) * (p - mu)).sum::<f32>() / c as f32;
        let inv_std = 1.0 / (v + NORM_EPS).sqrt();
        for j in 0..c {
            out.push((pos[j] - mu) * inv_std * gamma[j] + beta[j]);
        }
        mean.push(mu);
        var.push(v);
    }
    (Tensor::from_parts(x.shape().to_vec(), out), Aux::LayerNorm { mean, var })
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    model: &Model,
    i: usize,
    x: &Tensor,
    g: &Tensor,
    shape: FeatShape,
    trace: &Trace,
    want_params: bool,
    grads: &mut BTreeMap<String, Tensor>,
) -> Tensor {
    let n = x.n();
    let (c, _) = norm_geometry(shape, n);
    let gamma = weight(model, i, "gamma").data();
    let Aux::LayerNorm { mean, var } = &trace.aux[i] else { unreachable!() };
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    let mut dx = Vec::with_capacity(x.numel());
    for (pi, (pos, gpos)) in x
        .data()
        .chunks_exact(c)
        .zip(g.data().chunks_exact(c))
        .enumerate()
    {
        let inv_std = 1.0 / (var[pi] + NORM_EPS).sqrt();
        let mut mean_dxhat = 0.0f32;
        let mut mean_dxhat_xhat = 0.0f32;
        for j in 0..c {
            let xhat = (pos[j] - mean[pi]) * inv_std;
            let dxhat = gpos[j] * gamma[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
            dgamma[j] += gpos[j] * xhat;
            dbeta[j] += gpos[j];
        }
        mean_dxhat /= c as f32;
        mean_dxhat_xhat /= c as f32;
        for j in 0..c {
            let xhat = (pos[j] - mean[pi]) * inv_std;
            let dxhat = gpos[j] * gamma[j];
            dx.push((dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std);
        }
    }
    if want_params {
        grads.insert(param_name(i, "gamma"), Tensor::from_parts(vec![c], dgamma));
        grads.insert(param_name(i, "beta"), Tensor::from_parts(vec![c], dbeta));
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

// ---------------------------------------------------------------------------
// pooling

#[allow(clippy::too_many_arguments)]
fn max_pool_forward(
    x: &Tensor,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    s: usize,
    out_shape: FeatShape,
) -> (Tensor, Aux) {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for sn in 0..n {
        let xs = x.sample(sn);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_at = 0u32;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy * s + ky;
                            let ix = ox * s + kx;
                            let v = xs[(iy * w + ix) * c + ch];
                            // Ties keep the first window position in scan order.
                            if v > best {
                                best = v;
                                best_at = (iy * w + ix) as u32;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    (Tensor::from_parts(out_shape.to_dims(n), out), Aux::MaxPool { argmax })
}

fn max_pool_backward(g: &Tensor, argmax: &[u32], in_shape: FeatShape, n: usize) -> Tensor {
    let (h, w, c) = map_dims(in_shape);
    let per_sample_out = g.sample_numel();
    let mut dx = vec![0.0f32; n * h * w * c];
    for sn in 0..n {
        let gs = g.sample(sn);
        let base = sn * h * w * c;
        let amax = &argmax[sn * per_sample_out..(sn + 1) * per_sample_out];
        for (j, &gv) in gs.iter().enumerate() {
            let ch = j % c;
            let pos = amax[j] as usize;
            dx[base + pos * c + ch] += gv;
        }
    }
    Tensor::from_parts(in_shape.to_dims(n), dx)
}

#[allow(clippy::too_many_arguments)]
fn avg_pool_forward(
    x: &Tensor,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    s: usize,
    out_shape: FeatShape,
) -> Tensor {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let inv = 1.0 / (k * k) as f32;
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for sn in 0..n {
        let xs = x.sample(sn);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = 0.0f32;
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += xs[((oy * s + ky) * w + (ox * s + kx)) * c + ch];
                        }
                    }
                    out.push(acc * inv);
                }
            }
        }
    }
    Tensor::from_parts(out_shape.to_dims(n), out)
}

fn avg_pool_backward(g: &Tensor, n: usize, h: usize, w: usize, c: usize, k: usize, s: usize) -> Tensor {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let inv = 1.0 / (k * k) as f32;
    let mut dx = vec![0.0f32; n * h * w * c];
    for sn in 0..n {
        let gs = g.sample(sn);
        let dxs = &mut dx[sn * h * w * c..(sn + 1) * h * w * c];
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let gv = gs[(oy * ow + ox) * c + ch] * inv;
                    for ky in 0..k {
                        for kx in 0..k {
                            dxs[((oy * s + ky) * w + (ox * s + kx)) * c + ch] += gv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![n, h, w, c], dx)
}

fn global_avg_pool_forward(x: &Tensor, n: usize, h: usize, w: usize, c: usize) -> Tensor {
    let inv = 1.0 / (h * w) as f32;
    let mut out = Vec::with_capacity(n * c);
    for sn in 0..n {
        let xs = x.sample(sn);
        let mut acc = vec![0.0f32; c];
        for pos in xs.chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(pos) {
                *a += v;
            }
        }
        out.extend(acc.into_iter().map(|a| a * inv));
    }
    Tensor::from_parts(vec![n, c], out)
}

// ---------------------------------------------------------------------------
// attention

fn attention_forward(
    model: &Model,
    i: usize,
    x: &Tensor,
    n: usize,
    t: usize,
    c: usize,
    d: usize,
) -> (Tensor, Aux) {
    let wq = weight(model, i, "wq").data();
    let wk = weight(model, i, "wk").data();
    let wv = weight(model, i, "wv").data();
    let scale = 1.0 / (d as f32).sqrt();
    let mut q = vec![0.0f32; n * t * d];
    let mut kk = vec![0.0f32; n * t * d];
    let mut v = vec![0.0f32; n * t * c];
    let mut p = vec![0.0f32; n * t * t];
    let mut out = vec![0.0f32; n * t * c];
    for sn in 0..n {
        let xs = x.sample(sn);
        let qs = &mut q[sn * t * d..(sn + 1) * t * d];
        let ks = &mut kk[sn * t * d..(sn + 1) * t * d];
        let vs = &mut v[sn * t * c..(sn + 1) * t * c];
        matmul_acc(xs, wq, t, c, d, qs);
        matmul_acc(xs, wk, t, c, d, ks);
        matmul_acc(xs, wv, t, c, c, vs);
        let ps = &mut p[sn * t * t..(sn + 1) * t * t];
        matmul_nt_acc(qs, ks, t, d, t, ps);
        for row in ps.chunks_exact_mut(t) {
            let mut m = f32::NEG_INFINITY;
            for v in row.iter_mut() {
                *v *= scale;
                m = m.max(*v);
            }
            let mut sum = 0.0f32;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        matmul_acc(ps, vs, t, t, c, &mut out[sn * t * c..(sn + 1) * t * c]);
    }
    (
        Tensor::from_parts(x.shape().to_vec(), out),
        Aux::Attn { q, k: kk, v, p },
    )
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    model: &Model,
    i: usize,
    x: &Tensor,
    g: &Tensor,
    n: usize,
    t: usize,
    c: usize,
    d: usize,
    trace: &Trace,
    want_params: bool,
    grads: &mut BTreeMap<String, Tensor>,
) -> Tensor {
    let wq = weight(model, i, "wq").data();
    let wk = weight(model, i, "wk").data();
    let wv = weight(model, i, "wv").data();
    let Aux::Attn { q, k: kk, v, p } = &trace.aux[i] else { unreachable!() };
    let scale = 1.0 / (d as f32).sqrt();
    let mut dx = vec![0.0f32; n * t * c];
    let mut dwq = vec![0.0f32; c * d];
    let mut dwk = vec![0.0f32; c * d];
    let mut dwv = vec![0.0f32; c * c];
    for sn in 0..n {
        let xs = x.sample(sn);
        let gs = &g.data()[sn * t * c..(sn + 1) * t * c];
        let qs = &q[sn * t * d..(sn + 1) * t * d];
        let ks = &kk[sn * t * d..(sn + 1) * t * d];
        let vs = &v[sn * t * c..(sn + 1) * t * c];
        let ps = &p[sn * t * t..(sn + 1) * t * t];

        // dP = dY V^T; dV = P^T dY
        let mut dp = vec![0.0f32; t * t];
        matmul_nt_acc(gs, vs, t, c, t, &mut dp);
        let mut dv = vec![0.0f32; t * c];
        matmul_tn_acc(ps, gs, t, t, c, &mut dv);

        // softmax backward: dS = P .* (dP - rowsum(dP .* P)), then scale.
        let mut ds = vec![0.0f32; t * t];
        for r in 0..t {
            let prow = &ps[r * t..(r + 1) * t];
            let dprow = &dp[r * t..(r + 1) * t];
            let dot: f32 = prow.iter().zip(dprow).map(|(&a, &b)| a * b).sum();
            let dsrow = &mut ds[r * t..(r + 1) * t];
            for j in 0..t {
                dsrow[j] = prow[j] * (dprow[j] - dot) * scale;
            }
        }

        // dQ = dS K; dK = dS^T Q
        let mut dq = vec![0.0f32; t * d];
        matmul_acc(&ds, ks, t, t, d, &mut dq);
        let mut dk = vec![0.0f32; t * d];
        matmul_tn_acc(&ds, qs, t, t, d, &mut dk);

        // dX = dQ Wq^T + dK Wk^T + dV Wv^T
        let dxs = &mut dx[sn * t * c..(sn + 1) * t * c];
        matmul_nt_acc(&dq, wq, t, d, c, dxs);
        matmul_nt_acc(&dk, wk, t, d, c, dxs);
        matmul_nt_acc(&dv, wv, t, c, c, dxs);

        if want_params {
            matmul_tn_acc(xs, &dq, c, t, d, &mut dwq);
            matmul_tn_acc(xs, &dk, c, t, d, &mut dwk);
            matmul_tn_acc(xs, &dv, c, t, c, &mut dwv);
        }
    }
    if want_params {
        grads.insert(param_name(i, "wq"), Tensor::from_parts(vec![c, d], dwq));
        grads.insert(param_name(i, "wk"), Tensor::from_parts(vec![c, d], dwk));
        grads.insert(param_name(i, "wv"), Tensor::from_parts(vec![c, c], dwv));
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

// ---------------------------------------------------------------------------
// squeeze-excite

#[allow(clippy::too_many_arguments)]
fn squeeze_excite_forward(
    model: &Model,
    i: usize,
    x: &Tensor,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    ratio: usize,
) -> (Tensor, Aux) {
    let hid = c / ratio;
    let w1 = weight(model, i, "fc1.weight").data();
    let b1 = weight(model, i, "fc1.bias").data();
    let w2 = weight(model, i, "fc2.weight").data();
    let b2 = weight(model, i, "fc2.bias").data();
    let pooled = global_avg_pool_forward(x, n, h, w, c);
    let mut h_pre = vec![0.0f32; n * hid];
    matmul_acc(pooled.data(), w1, n, c, hid, &mut h_pre);
    for row in h_pre.chunks_exact_mut(hid) {
        for (o, &b) in row.iter_mut().zip(b1) {
            *o += b;
        }
    }
    let hvec: Vec<f32> = h_pre.iter().map(|&v| v.max(0.0)).collect();
    let mut gates = vec![0.0f32; n * c];
    matmul_acc(&hvec, w2, n, hid, c, &mut gates);
    for row in gates.chunks_exact_mut(c) {
        for (o, &b) in row.iter_mut().zip(b2) {
            *o += b;
        }
    }
    for v in &mut gates {
        *v = sigmoid(*v);
    }
    let mut out = Vec::with_capacity(x.numel());
    for sn in 0..n {
        let xs = x.sample(sn);
        let grow = &gates[sn * c..(sn + 1) * c];
        for pos in xs.chunks_exact(c) {
            for (j, &v) in pos.iter().enumerate() {
                out.push(v * grow[j]);
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), out),
        Aux::Se { pooled: pooled.data().to_vec(), h_pre, h: hvec, g: gates },
    )
}

#[allow(clippy::too_many_arguments)]
fn squeeze_excite_backward(
    model: &Model,
    i: usize,
    x: &Tensor,
    g: &Tensor,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    ratio: usize,
    trace: &Trace,
    want_params: bool,
    grads: &mut BTreeMap<String, Tensor>,
) -> Tensor {
    let hid = c / ratio;
    let w1 = weight(model, i, "fc1.weight").data();
    let w2 = weight(model, i, "fc2.weight").data();
    let Aux::Se { pooled, h_pre, h: hvec, g: gates } = &trace.aux[i] else { unreachable!() };
    let hw = h * w;

    // dGate_j = sum over positions of x .* dy; dX (direct path) = dy .* gate.
    let mut dgate = vec![0.0f32; n * c];
    let mut dx = vec![0.0f32; n * hw * c];
    for sn in 0..n {
        let xs = x.sample(sn);
        let gs = &g.data()[sn * hw * c..(sn + 1) * hw * c];
        let grow = &gates[sn * c..(sn + 1) * c];
        let drow = &mut dgate[sn * c..(sn + 1) * c];
        let dxs = &mut dx[sn * hw * c..(sn + 1) * hw * c];
        for pos in 0..hw {
            for j in 0..c {
                let idx = pos * c + j;
                drow[j] += xs[idx] * gs[idx];
                dxs[idx] = gs[idx] * grow[j];
            }
        }
    }

    // Through sigmoid, fc2, relu, fc1 back to the pooled vector.
    let mut dz2 = vec![0.0f32; n * c];
    for sn in 0..n {
        let grow = &gates[sn * c..(sn + 1) * c];
        for j in 0..c {
            let gv = grow[j];
            dz2[sn * c + j] = dgate[sn * c + j] * gv * (1.0 - gv);
        }
    }
    let mut dh = vec![0.0f32; n * hid];
    matmul_nt_acc(&dz2, w2, n, c, hid, &mut dh);
    let mut dh_pre = vec![0.0f32; n * hid];
    for (o, (&dv, &pre)) in dh_pre.iter_mut().zip(dh.iter().zip(h_pre)) {
        *o = if pre > 0.0 { dv } else { 0.0 };
    }
    let mut ds = vec![0.0f32; n * c];
    matmul_nt_acc(&dh_pre, w1, n, hid, c, &mut ds);

    if want_params {
        let mut dw2 = vec![0.0f32; hid * c];
        matmul_tn_acc(hvec, &dz2, hid, n, c, &mut dw2);
        let mut db2 = vec![0.0f32; c];
        for row in dz2.chunks_exact(c) {
            for (d, &v) in db2.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dw1 = vec![0.0f32; c * hid];
        matmul_tn_acc(pooled, &dh_pre, c, n, hid, &mut dw1);
        let mut db1 = vec![0.0f32; hid];
        for row in dh_pre.chunks_exact(hid) {
            for (d, &v) in db1.iter_mut().zip(row) {
                *d += v;
            }
        }
        grads.insert(param_name(i, "fc1.weight"), Tensor::from_parts(vec![c, hid], dw1));
        grads.insert(param_name(i, "fc1.bias"), Tensor::from_parts(vec![hid], db1));
        grads.insert(param_name(i, "fc2.weight"), Tensor::from_parts(vec![hid, c], dw2));
        grads.insert(param_name(i, "fc2.bias"), Tensor::from_parts(vec![c], db2));
    }

    // Pooled path spreads evenly over positions.
    let inv = 1.0 / hw as f32;
    for sn in 0..n {
        let srow = &ds[sn * c..(sn + 1) * c];
        let dxs = &mut dx[sn * hw * c..(sn + 1) * hw * c];
        for pos in 0..hw {
            for j in 0..c {
                dxs[pos * c + j] += srow[j] * inv;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}
