//! Temporary calibration harnesses: wall-clock timing of the default zoo
//! build plus per-family recipe probes. All `#[ignore]`d; run explicitly.

use archsim_core::nn::eval::accuracy;
use archsim_core::nn::train::{train_with_checkpoints, Schedule, TrainConfig};
use archsim_core::sat::{sat_matrix, SatConfig};
use archsim_core::zoo::{
    build_zoo, cnn_bn_relu_spec, cnn_patchify_gelu_spec, default_manifest, mini_attention_spec,
    mlp_spec, se_cnn_spec, synth_shapes, BuildOptions, SynthRecipe,
};
use std::time::Instant;

#[test]
#[ignore]
fn zoo_timing() {
    let recipe = SynthRecipe::new(7, 10, 200, 250, 32);
    let t0 = Instant::now();
    let (train, eval) = synth_shapes(&recipe).unwrap();
    println!("synth: {:?} (train {}, eval {})", t0.elapsed(), train.len(), eval.len());

    let manifest = default_manifest(7, 32, 10);
    println!("manifest entries: {}", manifest.entries.len());
    let t1 = Instant::now();
    let zoo = build_zoo(&manifest, &train, &eval, &BuildOptions::default()).unwrap();
    println!("build_zoo: {:?}", t1.elapsed());
    for m in &zoo.members {
        println!("  {:<24} {:<14} acc {:.3}", m.name(), m.family, m.accuracy());
    }
    for e in &zoo.report.excluded {
        println!("  EXCLUDED {:<24} {:<18} acc {:.3}", e.name, e.family, e.eval_accuracy);
    }

    let t2 = Instant::now();
    let models = zoo.models();
    let sm = sat_matrix(&models, &eval, &SatConfig::default()).unwrap();
    println!("sat_matrix: {:?} ({} models)", t2.elapsed(), sm.model_names.len());
}

/// Trains one spec across a learning-rate grid, printing the eval-accuracy
/// curve of each run. Controlled by env vars:
///   PROBE_SPEC   = cnn | patchify | se | attention | mlp   (default cnn)
///   PROBE_LRS    = comma list                               (default 0.03,0.1,0.3)
///   PROBE_EPOCHS = usize                                    (default 30)
///   PROBE_BATCH  = usize                                    (default 32)
///   PROBE_TRAIN  = per-class train samples                  (default 200)
#[test]
#[ignore]
fn recipe_probe() {
    let spec_name = std::env::var("PROBE_SPEC").unwrap_or_else(|_| "cnn".into());
    let lrs: Vec<f64> = std::env::var("PROBE_LRS")
        .unwrap_or_else(|_| "0.03,0.1,0.3".into())
        .split(',')
        .map(|s| s.trim().parse().unwrap())
        .collect();
    let epochs: usize = std::env::var("PROBE_EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(30);
    let batch: usize = std::env::var("PROBE_BATCH").map(|v| v.parse().unwrap()).unwrap_or(32);
    let per_class: usize = std::env::var("PROBE_TRAIN").map(|v| v.parse().unwrap()).unwrap_or(200);
    let wd: f64 = std::env::var("PROBE_WD").map(|v| v.parse().unwrap()).unwrap_or(5e-4);
    let momentum: f64 = std::env::var("PROBE_MOM").map(|v| v.parse().unwrap()).unwrap_or(0.9);

    let recipe = SynthRecipe::new(7, 10, per_class, 100, 32);
    let (train, eval) = synth_shapes(&recipe).unwrap();
    let spec = |name: &str| match spec_name.as_str() {
        "cnn" => cnn_bn_relu_spec(name, 32, 10),
        "patchify" => cnn_patchify_gelu_spec(name, 32, 10),
        "se" => se_cnn_spec(name, 32, 10),
        "attention" => mini_attention_spec(name, 32, 10),
        "mlp" => mlp_spec(name, 32, 10),
        other => panic!("unknown spec {other}"),
    };
    let marks: Vec<usize> = (1..=epochs).filter(|e| e % 5 == 0 || *e == 2).collect();

    use rayon::prelude::*;
    let results: Vec<String> = lrs
        .par_iter()
        .map(|&lr| {
            let cfg = TrainConfig {
                seed: 11,
                epochs,
                batch_size: batch,
                learning_rate: lr,
                weight_decay: wd,
                momentum,
                schedule: Schedule::Cosine,
                ..TrainConfig::default()
            };
            let t = Instant::now();
            let out = train_with_checkpoints(spec("probe"), &train, &eval, &cfg, None, &marks);
            match out {
                Ok((_, snaps)) => {
                    let curve: Vec<String> = snaps
                        .iter()
                        .map(|(ep, m)| {
                            let acc = accuracy(m, &eval.images, &eval.labels).unwrap();
                            let loss = archsim_core::nn::training_loss(
                                m,
                                &train.images.gather(&(0..100).collect::<Vec<_>>()),
                                &train.labels[..100],
                            )
                            .unwrap();
                            let logits =
                                archsim_core::nn::eval::logits(m, &eval.images.gather(&[0, 1, 2, 3]))
                                    .unwrap();
                            let d = logits.data();
                            let spread = d.iter().cloned().fold(f32::MIN, f32::max)
                                - d.iter().cloned().fold(f32::MAX, f32::min);
                            format!("e{ep}:{acc:.3}/L{loss:.2}/s{spread:.2}")
                        })
                        .collect();
                    format!(
                        "{spec_name} lr={lr:<5} wd={wd:<6} mom={momentum} batch={batch} n={per_class}/cls  {}  ({:?})",
                        curve.join(" "),
                        t.elapsed()
                    )
                }
                Err(e) => format!("{spec_name} lr={lr:<5} FAILED: {e}"),
            }
        })
        .collect();
    for r in &results {
        println!("{r}");
    }
}
