//! Model-zoo harness: datasets, the zoo manifest, and cached batch training.
//!
//! A zoo is described by a manifest (family specs × variations, each with a
//! training config) and materialized by [`build_zoo`], which trains members in
//! parallel, caches finished models on disk keyed by a content hash of
//! everything that determines the result, and drops members that miss the
//! eval-accuracy floor.

mod idx;
mod synth;

pub use idx::load_idx;
pub use synth::{synth_shapes, SynthRecipe, SYNTH_FORMAT};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::io::{load_model, save_model};
use crate::nn::train::{train, LabelMode, Schedule, TrainConfig};
use crate::nn::{chain_check, eval, LayerSpec, Model, ModelSpec};
use crate::archfeat::ArchFeatureRecord;
use crate::rng::stream_seed;
use crate::tensor::Tensor;

pub const ZOO_FORMAT: &str = "archsim-zoo/1";
pub const DEFAULT_ACCURACY_FLOOR: f64 = 0.85;

/// Which split of a dataset this is; training code refuses eval-split inputs
/// for gradient updates only by convention, but the tag travels with the data
/// so artifacts can record what they were computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Eval,
}

/// An in-memory labeled image dataset (NHWC, values in [0, 1]).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    /// Where the data came from (recipe string or file paths); used in cache
    /// keys so cached models are invalidated when the data changes.
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.images.n() {
            return Err(Error::Config(format!(
                "dataset {}: {} labels for {} images",
                self.name,
                self.labels.len(),
                self.images.n()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Degenerate(format!(
                "dataset {} has fewer than two classes",
                self.name
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Config(format!(
                "dataset {}: label {bad} out of range for {} classes",
                self.name, self.num_classes
            )));
        }
        Ok(())
    }

    /// A new dataset holding the given samples (in the given order).
    pub fn subset(&self, indices: &[usize], name: &str) -> Dataset {
        Dataset {
            name: name.to_string(),
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
            provenance: format!("{} subset[{}]", self.provenance, indices.len()),
        }
    }
}

/// What distinguishes a zoo member from its family baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variation {
    /// Fresh init/shuffle seed, everything else identical.
    Seed,
    /// Changed optimizer hyperparameters (learning rate, decay, schedule).
    Hparam,
    /// Changed training regime (e.g. trained on a teacher's hard labels).
    Regime,
}

/// One model to train: a spec plus its training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ZooEntry {
    pub family: String,
    pub variation: Variation,
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

impl ZooEntry {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Teacher entry name when this member trains on distilled labels.
    pub fn teacher(&self) -> Option<&str> {
        match &self.train.label_mode {
            LabelMode::TeacherHardDistill { teacher } => Some(teacher.as_str()),
            LabelMode::HardLabels => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ZooManifest {
    pub format: String,
    pub seed: u64,
    pub entries: Vec<ZooEntry>,
}

impl ZooManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format != ZOO_FORMAT {
            return Err(Error::Format(format!(
                "expected format {ZOO_FORMAT}, found {}",
                self.format
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.entries {
            let name = entry.name();
            if name.is_empty()
                || !name
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
            {
                return Err(Error::Config(format!(
                    "entry name {name:?} must be non-empty lowercase kebab-case"
                )));
            }
            if !seen.insert(name.to_string()) {
                return Err(Error::Config(format!("duplicate entry name {name}")));
            }
            chain_check(&entry.spec)?;
        }
        // Teachers must exist and must themselves train on ground truth, so
        // a single second pass resolves every dependency.
        for entry in &self.entries {
            if let Some(teacher) = entry.teacher() {
                let t = self
                    .entries
                    .iter()
                    .find(|e| e.name() == teacher)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "entry {} names unknown teacher {teacher}",
                            entry.name()
                        ))
                    })?;
                if t.teacher().is_some() {
                    return Err(Error::Config(format!(
                        "teacher {teacher} is itself distilled; chains are not supported"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        crate::io::atomic_write(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<ZooManifest> {
        let manifest: ZooManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// A trained, floor-passing zoo member.
#[derive(Debug, Clone)]
pub struct ZooMember {
    pub model: Model,
    pub family: String,
    pub variation: Variation,
}

impl ZooMember {
    pub fn name(&self) -> &str {
        self.model.name()
    }

    pub fn accuracy(&self) -> f64 {
        self.model.meta().final_clean_accuracy.unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MemberSummary {
    pub name: String,
    pub family: String,
    pub variation: Variation,
    pub eval_accuracy: f64,
}

/// What happened during a zoo build: who made the floor, who was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ZooReport {
    pub accuracy_floor: f64,
    pub retained: Vec<MemberSummary>,
    pub excluded: Vec<MemberSummary>,
    pub cache_hits: usize,
}

#[derive(Debug, Clone)]
pub struct Zoo {
    pub members: Vec<ZooMember>,
    pub report: ZooReport,
}

impl Zoo {
    pub fn member(&self, name: &str) -> Option<&ZooMember> {
        self.members.iter().find(|m| m.name() == name)
    }

    pub fn models(&self) -> Vec<&Model> {
        self.members.iter().map(|m| &m.model).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Directory for trained-model reuse across runs; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub accuracy_floor: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            cache_dir: None,
            accuracy_floor: DEFAULT_ACCURACY_FLOOR,
        }
    }
}

/// Trains (or loads from cache) every manifest entry. Ground-truth entries
/// train first, in parallel; distilled entries follow once their teachers
/// exist. Members below the accuracy floor are excluded from the returned
/// zoo but listed in the report.
pub fn build_zoo(
    manifest: &ZooManifest,
    train_data: &Dataset,
    eval_data: &Dataset,
    opts: &BuildOptions,
) -> Result<Zoo> {
    manifest.validate()?;
    train_data.validate()?;
    eval_data.validate()?;

    let (base, distilled): (Vec<&ZooEntry>, Vec<&ZooEntry>) = manifest
        .entries
        .iter()
        .partition(|e| e.teacher().is_none());

    let base_out: Vec<(String, (Model, bool))> = base
        .par_iter()
        .map(|entry| {
            let got = obtain(entry, train_data, eval_data, opts, None)?;
            Ok((entry.name().to_string(), got))
        })
        .collect::<Result<_>>()?;
    let mut models: BTreeMap<String, (Model, bool)> = base_out.into_iter().collect();

    let distilled_out: Vec<(String, (Model, bool))> = distilled
        .par_iter()
        .map(|entry| {
            let teacher_name = entry.teacher().expect("partitioned on teacher");
            let (teacher, _) = models
                .get(teacher_name)
                .ok_or_else(|| Error::Config(format!("teacher {teacher_name} was not trained")))?;
            let got = obtain(entry, train_data, eval_data, opts, Some(teacher))?;
            Ok((entry.name().to_string(), got))
        })
        .collect::<Result<_>>()?;
    models.extend(distilled_out);

    let mut retained = Vec::new();
    let mut excluded = Vec::new();
    let mut members = Vec::new();
    let mut cache_hits = 0usize;
    for entry in &manifest.entries {
        let (model, was_cached) = models.remove(entry.name()).expect("every entry trained");
        if was_cached {
            cache_hits += 1;
        }
        let acc = model.meta().final_clean_accuracy.unwrap_or(0.0);
        let summary = MemberSummary {
            name: entry.name().to_string(),
            family: entry.family.clone(),
            variation: entry.variation,
            eval_accuracy: acc,
        };
        if acc >= opts.accuracy_floor {
            retained.push(summary);
            members.push(ZooMember {
                model,
                family: entry.family.clone(),
                variation: entry.variation,
            });
        } else {
            log::warn!(
                "zoo member {} excluded: eval accuracy {:.4} below floor {:.2}",
                entry.name(),
                acc,
                opts.accuracy_floor
            );
            excluded.push(summary);
        }
    }

    Ok(Zoo {
        members,
        report: ZooReport {
            accuracy_floor: opts.accuracy_floor,
            retained,
            excluded,
            cache_hits,
        },
    })
}

/// Loads the entry's model from cache or trains it. The boolean reports a
/// cache hit.
fn obtain(
    entry: &ZooEntry,
    train_data: &Dataset,
    eval_data: &Dataset,
    opts: &BuildOptions,
    teacher: Option<&Model>,
) -> Result<(Model, bool)> {
    let key = cache_key(entry, train_data, eval_data, teacher);
    if let Some(dir) = &opts.cache_dir {
        let stem = dir.join(&key);
        let json_path = stem.with_extension("json");
        if json_path.exists() {
            let model = load_model(&json_path)?;
            verify_cached_accuracy(&model, eval_data, &json_path)?;
            return Ok((model, true));
        }
    }
    let model = train(entry.spec.clone(), train_data, eval_data, &entry.train, teacher)?;
    if let Some(dir) = &opts.cache_dir {
        std::fs::create_dir_all(dir)?;
        save_model(&model, &dir.join(&key))?;
    }
    Ok((model, false))
}

/// A cached model must reproduce its recorded eval accuracy exactly; anything
/// else means the cache no longer matches the data or code that produced it.
fn verify_cached_accuracy(model: &Model, eval_data: &Dataset, path: &Path) -> Result<()> {
    let recorded = model.meta().final_clean_accuracy.ok_or_else(|| {
        Error::Format(format!(
            "cached model {} records no eval accuracy",
            path.display()
        ))
    })?;
    let [h, w, _] = model.input_resolution();
    let images = crate::resize::to_resolution(&eval_data.images, h, w)?;
    let fresh = eval::accuracy(model, &images, &eval_data.labels)?;
    if (fresh - recorded).abs() > 1e-12 {
        return Err(Error::Format(format!(
            "cached model {} is stale: recorded eval accuracy {recorded}, recomputed {fresh}",
            path.display()
        )));
    }
    Ok(())
}

/// Content hash over everything that determines a trained model: spec,
/// training config, dataset identities, and (for distillation) the teacher's
/// own key recursively via its cache identity.
fn cache_key(
    entry: &ZooEntry,
    train_data: &Dataset,
    eval_data: &Dataset,
    teacher: Option<&Model>,
) -> String {
    let spec_json = serde_json::to_string(&entry.spec).expect("spec serializes");
    let cfg_json = serde_json::to_string(&entry.train).expect("config serializes");
    let teacher_tag = teacher.map_or(String::new(), |t| {
        format!(
            "{}|{}",
            t.name(),
            serde_json::to_string(&t.meta()).expect("meta serializes")
        )
    });
    let blob = format!(
        "{spec_json}\n{cfg_json}\n{}\n{}\n{teacher_tag}",
        train_data.provenance, eval_data.provenance
    );
    format!("{}-{:016x}", entry.name(), crate::rng::fnv1a64(blob.as_bytes()))
}

/// The stock desk-scale zoo: five families, seed/hyperparameter/regime
/// variations, thirteen members total. All members share one input
/// resolution; cross-resolution behavior is exercised by dedicated tests.
pub fn default_manifest(seed: u64, resolution: usize, num_classes: usize) -> ZooManifest {
    let res = resolution;
    let k = num_classes;
    let seed_for = |name: &str| stream_seed(seed, &format!("zoo-train/{name}"), 0);
    let mut entries = Vec::new();

    // Family 1: batch-norm ReLU CNN — three seeds, two hyperparameter
    // variants (same init seed as s0 so only the optimizer differs), one
    // distilled student (fresh seed so only the regime differs).
    let cnn_cfg = TrainConfig {
        epochs: 12,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    for s in 0..3 {
        let name = format!("cnn-bn-relu-s{s}");
        entries.push(ZooEntry {
            family: "cnn-bn-relu".into(),
            variation: Variation::Seed,
            spec: cnn_bn_relu_spec(&name, res, k),
            train: TrainConfig { seed: seed_for(&name), ..cnn_cfg.clone() },
        });
    }
    entries.push(ZooEntry {
        family: "cnn-bn-relu".into(),
        variation: Variation::Hparam,
        spec: cnn_bn_relu_spec("cnn-bn-relu-hp-fast", res, k),
        train: TrainConfig {
            seed: seed_for("cnn-bn-relu-s0"),
            learning_rate: 0.15,
            weight_decay: 1e-4,
            schedule: Schedule::StepDecay,
            ..cnn_cfg.clone()
        },
    });
    entries.push(ZooEntry {
        family: "cnn-bn-relu".into(),
        variation: Variation::Hparam,
        spec: cnn_bn_relu_spec("cnn-bn-relu-hp-slow", res, k),
        train: TrainConfig {
            seed: seed_for("cnn-bn-relu-s0"),
            learning_rate: 0.015,
            weight_decay: 5e-3,
            ..cnn_cfg.clone()
        },
    });
    entries.push(ZooEntry {
        family: "cnn-bn-relu".into(),
        variation: Variation::Regime,
        spec: cnn_bn_relu_spec("cnn-bn-relu-distill", res, k),
        train: TrainConfig {
            seed: seed_for("cnn-bn-relu-distill"),
            label_mode: LabelMode::TeacherHardDistill { teacher: "cnn-bn-relu-s0".into() },
            ..cnn_cfg.clone()
        },
    });

    // Family 2: isotropic patchify-stem GELU CNN.
    let patch_cfg = TrainConfig {
        epochs: 16,
        learning_rate: 0.03,
        ..TrainConfig::default()
    };
    for s in 0..2 {
        let name = format!("cnn-patchify-gelu-s{s}");
        entries.push(ZooEntry {
            family: "cnn-patchify-gelu".into(),
            variation: Variation::Seed,
            spec: cnn_patchify_gelu_spec(&name, res, k),
            train: TrainConfig { seed: seed_for(&name), ..patch_cfg.clone() },
        });
    }

    // Family 3: SiLU CNN with squeeze-excite gates.
    let se_cfg = TrainConfig {
        epochs: 12,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    for s in 0..2 {
        let name = format!("se-cnn-s{s}");
        entries.push(ZooEntry {
            family: "se-cnn".into(),
            variation: Variation::Seed,
            spec: se_cnn_spec(&name, res, k),
            train: TrainConfig { seed: seed_for(&name), ..se_cfg.clone() },
        });
    }

    // Family 4: single-head attention over patch tokens.
    let attn_cfg = TrainConfig {
        epochs: 20,
        learning_rate: 0.02,
        ..TrainConfig::default()
    };
    for s in 0..2 {
        let name = format!("mini-attention-s{s}");
        entries.push(ZooEntry {
            family: "mini-attention".into(),
            variation: Variation::Seed,
            spec: mini_attention_spec(&name, res, k),
            train: TrainConfig { seed: seed_for(&name), ..attn_cfg.clone() },
        });
    }

    // Family 5: plain MLP on raw pixels.
    let name = "mlp-s0";
    entries.push(ZooEntry {
        family: "mlp".into(),
        variation: Variation::Seed,
        spec: mlp_spec(name, res, k),
        train: TrainConfig {
            seed: seed_for(name),
            epochs: 20,
            learning_rate: 0.05,
            ..TrainConfig::default()
        },
    });

    ZooManifest {
        format: ZOO_FORMAT.to_string(),
        seed,
        entries,
    }
}

pub fn cnn_bn_relu_spec(name: &str, res: usize, num_classes: usize) -> ModelSpec {
    let conv = |c: usize| LayerSpec::Conv2d {
        kernel: 3,
        stride: 1,
        padding: 1,
        groups: 1,
        out_channels: c,
    };
    let pool = LayerSpec::MaxPool { kernel: 2, stride: 2 };
    ModelSpec {
        name: name.to_string(),
        input_resolution: [res, res, 3],
        num_classes,
        layers: vec![
            conv(8),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            pool.clone(),
            conv(16),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            pool,
            conv(24),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { units: num_classes },
        ],
        arch_features: ArchFeatureRecord {
            base_architecture: "cnn".into(),
            stem_layer: "conv3x3".into(),
            input_resolution: res.to_string(),
            normalization: "batch-norm".into(),
            hierarchical: "yes".into(),
            activation: "relu".into(),
            pooling_at_stem: "yes".into(),
            self_attention_2d: "no".into(),
            channel_wise_attention: "no".into(),
            depthwise_conv: "no".into(),
            group_conv: "no".into(),
            final_pooling: "gap".into(),
            cw_attention_location: "none".into(),
        },
    }
}

pub fn cnn_patchify_gelu_spec(name: &str, res: usize, num_classes: usize) -> ModelSpec {
    let conv = |c: usize| LayerSpec::Conv2d {
        kernel: 3,
        stride: 1,
        padding: 1,
        groups: 1,
        out_channels: c,
    };
    ModelSpec {
        name: name.to_string(),
        input_resolution: [res, res, 3],
        num_classes,
        layers: vec![
            LayerSpec::Patchify { kernel: 4, out_channels: 16 },
            LayerSpec::LayerNorm,
            LayerSpec::Gelu,
            conv(32),
            LayerSpec::LayerNorm,
            LayerSpec::Gelu,
            conv(32),
            LayerSpec::LayerNorm,
            LayerSpec::Gelu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { units: num_classes },
        ],
        arch_features: ArchFeatureRecord {
            base_architecture: "cnn".into(),
            stem_layer: "patchify-4x4".into(),
            input_resolution: res.to_string(),
            normalization: "layer-norm".into(),
            hierarchical: "no".into(),
            activation: "gelu".into(),
            pooling_at_stem: "no".into(),
            self_attention_2d: "no".into(),
            channel_wise_attention: "no".into(),
            depthwise_conv: "no".into(),
            group_conv: "no".into(),
            final_pooling: "gap".into(),
            cw_attention_location: "none".into(),
        },
    }
}

pub fn se_cnn_spec(name: &str, res: usize, num_classes: usize) -> ModelSpec {
    let conv = |c: usize| LayerSpec::Conv2d {
        kernel: 3,
        stride: 1,
        padding: 1,
        groups: 1,
        out_channels: c,
    };
    let pool = LayerSpec::MaxPool { kernel: 2, stride: 2 };
    let se = LayerSpec::SqueezeExcite { reduction_ratio: 4 };
    ModelSpec {
        name: name.to_string(),
        input_resolution: [res, res, 3],
        num_classes,
        layers: vec![
            conv(8),
            LayerSpec::BatchNorm,
            LayerSpec::Silu,
            se.clone(),
            pool.clone(),
            conv(16),
            LayerSpec::BatchNorm,
            LayerSpec::Silu,
            se.clone(),
            pool,
            conv(24),
            LayerSpec::BatchNorm,
            LayerSpec::Silu,
            se,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { units: num_classes },
        ],
        arch_features: ArchFeatureRecord {
            base_architecture: "cnn".into(),
            stem_layer: "conv3x3".into(),
            input_resolution: res.to_string(),
            normalization: "batch-norm".into(),
            hierarchical: "yes".into(),
            activation: "silu".into(),
            pooling_at_stem: "yes".into(),
            self_attention_2d: "no".into(),
            channel_wise_attention: "yes".into(),
            depthwise_conv: "no".into(),
            group_conv: "no".into(),
            final_pooling: "gap".into(),
            cw_attention_location: "each-stage".into(),
        },
    }
}

pub fn mini_attention_spec(name: &str, res: usize, num_classes: usize) -> ModelSpec {
    let conv1x1 = |c: usize| LayerSpec::Conv2d {
        kernel: 1,
        stride: 1,
        padding: 0,
        groups: 1,
        out_channels: c,
    };
    ModelSpec {
        name: name.to_string(),
        input_resolution: [res, res, 3],
        num_classes,
        layers: vec![
            LayerSpec::Patchify { kernel: 4, out_channels: 24 },
            LayerSpec::ResidualBegin,
            LayerSpec::LayerNorm,
            LayerSpec::SelfAttention1h { token_dim: 16 },
            LayerSpec::ResidualEnd,
            LayerSpec::ResidualBegin,
            LayerSpec::LayerNorm,
            conv1x1(48),
            LayerSpec::Gelu,
            conv1x1(24),
            LayerSpec::ResidualEnd,
            LayerSpec::LayerNorm,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { units: num_classes },
        ],
        arch_features: ArchFeatureRecord {
            base_architecture: "transformer".into(),
            stem_layer: "patchify-4x4".into(),
            input_resolution: res.to_string(),
            normalization: "layer-norm".into(),
            hierarchical: "no".into(),
            activation: "gelu".into(),
            pooling_at_stem: "no".into(),
            self_attention_2d: "yes".into(),
            channel_wise_attention: "no".into(),
            depthwise_conv: "no".into(),
            group_conv: "no".into(),
            final_pooling: "gap".into(),
            cw_attention_location: "none".into(),
        },
    }
}

pub fn mlp_spec(name: &str, res: usize, num_classes: usize) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        input_resolution: [res, res, 3],
        num_classes,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 128 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 64 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: num_classes },
        ],
        arch_features: ArchFeatureRecord {
            base_architecture: "mlp".into(),
            stem_layer: "none".into(),
            input_resolution: res.to_string(),
            normalization: "none".into(),
            hierarchical: "no".into(),
            activation: "relu".into(),
            pooling_at_stem: "no".into(),
            self_attention_2d: "no".into(),
            channel_wise_attention: "no".into(),
            depthwise_conv: "no".into(),
            group_conv: "no".into(),
            final_pooling: "none".into(),
            cw_attention_location: "none".into(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_manifest_is_valid_and_diverse() {
        let manifest = default_manifest(7, 32, 6);
        manifest.validate().unwrap();
        assert_eq!(manifest.entries.len(), 13);
        let families: std::collections::BTreeSet<_> =
            manifest.entries.iter().map(|e| e.family.clone()).collect();
        assert_eq!(families.len(), 5);
        assert!(manifest.entries.iter().any(|e| e.variation == Variation::Hparam));
        assert!(manifest.entries.iter().any(|e| e.variation == Variation::Regime));
    }

    #[test]
    fn manifest_rejects_duplicate_names_and_bad_teachers() {
        let mut manifest = default_manifest(7, 32, 4);
        manifest.entries[1].spec.name = manifest.entries[0].spec.name.clone();
        assert!(manifest.validate().is_err());

        let mut manifest = default_manifest(7, 32, 4);
        if let Some(e) = manifest
            .entries
            .iter_mut()
            .find(|e| e.teacher().is_some())
        {
            e.train.label_mode = LabelMode::TeacherHardDistill { teacher: "nobody".into() };
        }
        assert!(manifest.validate().is_err());
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = default_manifest(7, 32, 4);
        let path = dir.path().join("zoo.json");
        manifest.save(&path).unwrap();
        let back = ZooManifest::load(&path).unwrap();
        assert_eq!(manifest, back);
    }

    #[test]
    fn subset_preserves_labels_and_order() {
        let recipe = SynthRecipe::new(3, 3, 4, 2, 16);
        let (train, _) = synth_shapes(&recipe).unwrap();
        let sub = train.subset(&[5, 0, 11], "sub");
        assert_eq!(sub.len(), 3);
        assert_eq!(sub.labels, vec![train.labels[5], train.labels[0], train.labels[11]]);
        assert_eq!(sub.images.sample(1), train.images.sample(0));
    }

    #[test]
    fn seed_variants_differ_only_in_seed() {
        let manifest = default_manifest(7, 32, 6);
        let s0 = &manifest.entries[0];
        let s1 = &manifest.entries[1];
        assert_ne!(s0.train.seed, s1.train.seed);
        assert_eq!(
            TrainConfig { seed: 0, ..s0.train.clone() },
            TrainConfig { seed: 0, ..s1.train.clone() }
        );
        assert_eq!(s0.spec.layers, s1.spec.layers);
    }
}
