//! Finite-difference verification of analytic gradients.
//!
//! Every layer kind is exercised inside a small model over five input
//! shapes. Input gradients (the attack surface) are checked in inference
//! mode against central differences of the summed cross-entropy loss;
//! parameter gradients (the optimizer surface) are checked in training mode
//! against central differences of the mean loss. Gradients are compared as
//! whole vectors at a relative error of 1e-3 with step 1e-3.
//!
//! The engine runs in f32, so a central difference of the loss carries an
//! irreducible per-element noise of order `ulp(loss) / (2*step)` — about
//! 6e-5 per unit of loss — no matter how the model is scaled (weight or
//! logit rescaling moves signal and rounding noise together). Comparisons
//! are therefore per element with the relative tolerance plus an absolute
//! floor at that noise level, the standard form for f32 gradient checks.
//! The floor also covers parameters whose true gradient is exactly zero
//! (e.g. a conv bias feeding train-mode batch-norm), where only noise is
//! measurable on the numeric side.

use std::collections::BTreeMap;

use archsim_core::archfeat::ArchFeatureRecord;
use archsim_core::nn::{
    inference_loss_sum, param_specs, training_gradients, training_loss, LayerSpec, Model,
    ModelSpec, TrainingMeta,
};
use archsim_core::rng::stream;
use archsim_core::tensor::Tensor;
use rand::Rng;

const FD_STEP: f64 = 1e-3;
const REL_TOL: f64 = 1e-3;
/// Multiplier on the f32 finite-difference noise floor `ulp(loss)/(2*step)`
/// used as the absolute tolerance. Rounding accumulates over the ops of a
/// forward pass; the worst tail observed across all ~40k comparisons in this
/// suite is ~10x the single-op floor, so 20x gives 2x headroom while staying
/// far below any real-bug signature (which shows up at the gradient's own
/// scale, 50-1000x this floor).
const NOISE_KAPPA: f64 = 20.0;

fn spec_named(
    name: &str,
    input: [usize; 3],
    num_classes: usize,
    layers: Vec<LayerSpec>,
) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        input_resolution: input,
        num_classes,
        layers,
        arch_features: ArchFeatureRecord::placeholder(),
    }
}

fn random_batch(seed: u64, n: usize, input: [usize; 3], num_classes: usize) -> (Tensor, Vec<usize>) {
    let mut rng = stream(seed, "fd/batch", 0);
    let numel = n * input[0] * input[1] * input[2];
    let data: Vec<f32> = (0..numel).map(|_| rng.gen_range(0.05f32..0.95)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..num_classes)).collect();
    (Tensor::new(vec![n, input[0], input[1], input[2]], data).unwrap(), labels)
}

fn assert_gradients_agree(analytic: &[f64], numeric: &[f64], loss_scale: f64, what: &str) {
    let atol = NOISE_KAPPA * (f32::EPSILON as f64) * loss_scale.max(1.0) / (2.0 * FD_STEP);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = atol + REL_TOL * a.abs().max(n.abs());
        assert!(
            (a - n).abs() <= tol,
            "{what}[{i}]: analytic {a:.6e} vs numeric {n:.6e} exceeds tol {tol:.2e} \
             ({} elements, loss scale {loss_scale:.2})",
            analytic.len()
        );
    }
}

/// Checks `input_gradient` against central differences on every pixel.
fn check_input_gradient(spec: ModelSpec, seed: u64) {
    let name = spec.name.clone();
    let input = spec.input_resolution;
    let k = spec.num_classes;
    let model = Model::init(spec, seed).unwrap();
    let (images, labels) = random_batch(seed ^ 0x5a5a, 1, input, k);

    let analytic: Vec<f64> = model
        .input_gradient(&images, &labels)
        .unwrap()
        .data()
        .iter()
        .map(|&g| g as f64)
        .collect();

    let mut numeric = vec![0.0f64; analytic.len()];
    for i in 0..numeric.len() {
        let mut plus = images.data().to_vec();
        plus[i] += FD_STEP as f32;
        let mut minus = images.data().to_vec();
        minus[i] -= FD_STEP as f32;
        let shape = images.shape().to_vec();
        let lp = inference_loss_sum(&model, &Tensor::new(shape.clone(), plus).unwrap(), &labels).unwrap();
        let lm = inference_loss_sum(&model, &Tensor::new(shape, minus).unwrap(), &labels).unwrap();
        numeric[i] = (lp - lm) / (2.0 * FD_STEP);
    }

    let base = inference_loss_sum(&model, &images, &labels).unwrap();
    assert_gradients_agree(&analytic, &numeric, base.abs(), &format!("{name} input-gradient"));
}

/// Checks every parameter's training-mode gradient by rebuilding the model
/// with single-element perturbations.
fn check_param_gradients(spec: ModelSpec, seed: u64) {
    let name = spec.name.clone();
    let input = spec.input_resolution;
    let k = spec.num_classes;
    let model = Model::init(spec.clone(), seed).unwrap();
    let (images, labels) = random_batch(seed ^ 0xc3c3, 1, input, k);

    let (base, grads) = training_gradients(&model, &images, &labels).unwrap();

    let mut checked = 0;
    for pspec in param_specs(&spec).unwrap() {
        let Some(grad) = grads.get(&pspec.name) else {
            continue; // buffers carry no gradient
        };
        let analytic: Vec<f64> = grad.data().iter().map(|&g| g as f64).collect();
        let mut numeric = vec![0.0f64; analytic.len()];
        for i in 0..numeric.len() {
            let loss_at = |delta: f32| {
                let mut weights: BTreeMap<String, Tensor> = model.weights().clone();
                let w = weights.get_mut(&pspec.name).unwrap();
                let mut data = w.data().to_vec();
                data[i] += delta;
                *w = Tensor::new(w.shape().to_vec(), data).unwrap();
                let m = Model::from_parts(spec.clone(), weights, TrainingMeta::default()).unwrap();
                training_loss(&m, &images, &labels).unwrap()
            };
            numeric[i] = (loss_at(FD_STEP as f32) - loss_at(-(FD_STEP as f32))) / (2.0 * FD_STEP);
        }
        assert_gradients_agree(&analytic, &numeric, base.abs(), &format!("{name} {}", pspec.name));
        checked += 1;
    }
    assert!(checked > 0, "{name}: no parameters checked");
}

/// Five input shapes per layer kind, varying spatial size and channel count.
fn shapes_for(kind: &str) -> Vec<[usize; 3]> {
    match kind {
        // Attention and patchify need kernel-divisible spatial dims.
        "patchify" | "attention" => vec![
            [4, 4, 2],
            [8, 8, 1],
            [4, 8, 1],
            [8, 4, 2],
            [4, 4, 3],
        ],
        // Global pooling divides gradients by H*W, so its shapes stay tiny.
        "global-avg-pool" => vec![
            [2, 2, 2],
            [3, 3, 3],
            [2, 3, 1],
            [3, 2, 2],
            [2, 2, 4],
        ],
        _ => vec![
            [4, 4, 2],
            [4, 4, 3],
            [4, 5, 1],
            [5, 4, 2],
            [4, 4, 4],
        ],
    }
}

/// Runs input- and parameter-gradient checks over all shapes for one layer
/// kind.
fn run_shapes(kind: &str, build: impl Fn(&str, [usize; 3], usize) -> ModelSpec) {
    for (i, &input) in shapes_for(kind).iter().enumerate() {
        let spec = build(&format!("{kind}-{i}"), input, 3);
        check_input_gradient(spec.clone(), 40 + i as u64);
        check_param_gradients(spec, 90 + i as u64);
    }
}

/// Flatten head: keeps per-pixel loss sensitivity high (no pooling between
/// the tested layer and the loss).
fn with_head(mut body: Vec<LayerSpec>, k: usize) -> Vec<LayerSpec> {
    body.push(LayerSpec::Flatten);
    body.push(LayerSpec::Dense { units: k });
    body
}

fn conv(kernel: usize, stride: usize, padding: usize, groups: usize, out: usize) -> LayerSpec {
    LayerSpec::Conv2d { kernel, stride, padding, groups, out_channels: out }
}

#[test]
fn dense_gradients() {
    run_shapes(
        "dense",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                vec![
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: 10 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { units: k },
                ],
            )
        },
    );
}

#[test]
fn conv2d_gradients() {
    run_shapes(
        "conv",
        |n, input, k| spec_named(n, input, k, with_head(vec![conv(3, 1, 1, 1, 4)], k)),
    );
}

#[test]
fn conv2d_strided_unpadded_gradients() {
    run_shapes(
        "conv-stride",
        |n, input, k| spec_named(n, input, k, with_head(vec![conv(2, 2, 0, 1, 4)], k)),
    );
}

#[test]
fn grouped_conv_gradients() {
    // Input channels vary per shape; pre-expand to 4 channels so groups=2 divides.
    run_shapes(
        "conv-group",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(vec![conv(1, 1, 0, 1, 4), conv(3, 1, 1, 2, 6)], k),
            )
        },
    );
}

#[test]
fn depthwise_conv_gradients() {
    run_shapes(
        "conv-depthwise",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(vec![conv(1, 1, 0, 1, 4), conv(3, 1, 1, 4, 4)], k),
            )
        },
    );
}

#[test]
fn batch_norm_gradients() {
    // Batch statistics make the loss exactly invariant to the preceding
    // conv's bias (its analytic gradient is exactly zero and the numeric
    // side is noise; the absolute tolerance covers both).
    run_shapes(
        "batch-norm",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(
                    vec![conv(3, 1, 1, 1, 4), LayerSpec::BatchNorm, LayerSpec::Relu],
                    k,
                ),
            )
        },
    );
}

#[test]
fn layer_norm_gradients() {
    run_shapes(
        "layer-norm",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(
                    vec![conv(3, 1, 1, 1, 4), LayerSpec::LayerNorm, LayerSpec::Gelu],
                    k,
                ),
            )
        },
    );
}

#[test]
fn activation_gradients() {
    for (i, act) in [
        LayerSpec::Relu,
        LayerSpec::Gelu,
        LayerSpec::Silu,
        LayerSpec::LeakyRelu { negative_slope: 0.01 },
        LayerSpec::LeakyRelu { negative_slope: 0.2 },
    ]
    .into_iter()
    .enumerate()
    {
        run_shapes(
            &format!("act{i}"),
            |n, input, k| {
                spec_named(n, input, k, with_head(vec![conv(3, 1, 1, 1, 3), act.clone()], k))
            },
        );
    }
}

#[test]
fn max_pool_gradients() {
    run_shapes(
        "max-pool",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(
                    vec![conv(3, 1, 1, 1, 4), LayerSpec::MaxPool { kernel: 2, stride: 2 }],
                    k,
                ),
            )
        },
    );
}

#[test]
fn avg_pool_gradients() {
    run_shapes(
        "avg-pool",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(
                    vec![conv(3, 1, 1, 1, 4), LayerSpec::AvgPool { kernel: 2, stride: 2 }],
                    k,
                ),
            )
        },
    );
}

#[test]
fn global_avg_pool_gradients() {
    // Small spatial extent keeps the 1/(H*W) attenuation mild.
    run_shapes(
        "global-avg-pool",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                vec![
                    conv(3, 1, 1, 1, 6),
                    LayerSpec::Silu,
                    LayerSpec::GlobalAvgPool,
                    LayerSpec::Dense { units: k },
                ],
            )
        },
    );
}

#[test]
fn flatten_gradients() {
    run_shapes(
        "flatten",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                vec![
                    conv(3, 1, 1, 1, 2),
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: k },
                ],
            )
        },
    );
}

#[test]
fn residual_gradients() {
    run_shapes(
        "residual",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(
                    vec![
                        conv(1, 1, 0, 1, 4),
                        LayerSpec::ResidualBegin,
                        conv(3, 1, 1, 1, 4),
                        LayerSpec::Silu,
                        LayerSpec::ResidualEnd,
                    ],
                    k,
                ),
            )
        },
    );
}

#[test]
fn nested_residual_gradients() {
    run_shapes(
        "residual-nested",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(
                    vec![
                        conv(1, 1, 0, 1, 2),
                        LayerSpec::ResidualBegin,
                        LayerSpec::ResidualBegin,
                        conv(3, 1, 1, 1, 2),
                        LayerSpec::ResidualEnd,
                        LayerSpec::Relu,
                        LayerSpec::ResidualEnd,
                    ],
                    k,
                ),
            )
        },
    );
}

#[test]
fn patchify_gradients() {
    run_shapes(
        "patchify",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(vec![LayerSpec::Patchify { kernel: 4, out_channels: 5 }], k),
            )
        },
    );
}

#[test]
fn self_attention_gradients() {
    run_shapes(
        "attention",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(
                    vec![
                        LayerSpec::Patchify { kernel: 4, out_channels: 6 },
                        LayerSpec::SelfAttention1h { token_dim: 4 },
                    ],
                    k,
                ),
            )
        },
    );
}

#[test]
fn squeeze_excite_gradients() {
    run_shapes(
        "squeeze-excite",
        |n, input, k| {
            spec_named(
                n,
                input,
                k,
                with_head(
                    vec![conv(1, 1, 0, 1, 4), LayerSpec::SqueezeExcite { reduction_ratio: 2 }],
                    k,
                ),
            )
        },
    );
}

#[test]
fn composite_model_gradients() {
    // A model mixing most layer kinds at once, checked on the input path
    // (which flows through every backward rule, including the batch-stat
    // normalization backward).
    let spec = spec_named(
        "composite",
        [8, 8, 3],
        4,
        vec![
            conv(3, 1, 1, 1, 6),
            LayerSpec::BatchNorm,
            LayerSpec::Silu,
            LayerSpec::SqueezeExcite { reduction_ratio: 2 },
            LayerSpec::MaxPool { kernel: 2, stride: 2 },
            LayerSpec::ResidualBegin,
            LayerSpec::LayerNorm,
            conv(3, 1, 1, 1, 6),
            LayerSpec::Gelu,
            LayerSpec::ResidualEnd,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 4 },
        ],
    );
    check_input_gradient(spec, 7);
}
