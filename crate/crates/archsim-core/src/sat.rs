//! Similarity by attack transferability.
//!
//! The score for a model pair (A, B) is the natural log of the clamped
//! symmetric transfer percentage
//!
//! ```text
//! SAT(A, B) = ln( max{ ε_s, 100 · (1 / 2|X_AB|) · Σ_{x ∈ X_AB}
//!                      (1[A(x_B) ≠ y] + 1[B(x_A) ≠ y]) } )
//! ```
//!
//! where `X_AB` is the set of evaluation inputs both models classify
//! correctly, `x_A`/`x_B` are adversarial examples generated on A/B for
//! those inputs, and ε_s > 0 floors the percentage so the log stays finite.
//! The clamp applies to the symmetric average only, never per direction.
//! Scores live in `[ln ε_s, ln 100]`; perfect two-way transfer gives
//! `ln 100 ≈ 4.605`.
//!
//! When the two models run at different input resolutions, the attacked
//! image is bilinearly resized from the source resolution to the target's.
//!
//! Determinism and compositionality: the evaluation subsample is drawn once
//! per matrix from a named stream and shared by every pair, and adversarial
//! examples are keyed by each sample's index in the supplied evaluation set,
//! so a full-matrix entry, a standalone pair score, and a score recomputed
//! on any subset of the evaluation set agree bit-for-bit wherever they
//! overlap.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{attack_with_ids, AdvBatch, AttackConfig};
use crate::error::{Error, Result};
use crate::nn::{eval, Model};
use crate::rng::stream;
use crate::tensor::Tensor;
use crate::zoo::Dataset;

pub const SAT_FORMAT: &str = "archsim-sat/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizeRule {
    /// Bilinear interpolation, no antialiasing.
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SatConfig {
    /// Percentage floor ε_s inside the log; keeps zero transfer finite.
    pub epsilon_floor: f64,
    /// Fraction of the evaluation set drawn (once, shared by all pairs).
    pub eval_fraction: f64,
    pub attack: AttackConfig,
    pub resize_rule: ResizeRule,
    /// Seed for the subsample draw.
    pub seed: u64,
}

impl Default for SatConfig {
    fn default() -> Self {
        SatConfig {
            epsilon_floor: 0.01,
            eval_fraction: 0.10,
            attack: AttackConfig::default(),
            resize_rule: ResizeRule::Bilinear,
            seed: 0,
        }
    }
}

impl SatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor < 100.0) {
            return Err(Error::Config(format!(
                "epsilon floor {} outside (0, 100)",
                self.epsilon_floor
            )));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "eval fraction {} outside (0, 1]",
                self.eval_fraction
            )));
        }
        Ok(())
    }
}

/// One pair score: the clamped pre-log percentage and its natural log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatScore {
    /// Clamped symmetric transfer percentage in `[ε_s, 100]`.
    pub raw: f64,
    /// `ln(raw)`.
    pub value: f64,
}

/// The symmetric score from raw transfer counts: `fooled_a` inputs fooled A
/// when transferred from B, `fooled_b` fooled B when transferred from A,
/// out of `eligible` jointly-correct inputs.
pub fn sat_from_counts(
    fooled_a: usize,
    fooled_b: usize,
    eligible: usize,
    epsilon_floor: f64,
) -> Result<SatScore> {
    if eligible == 0 {
        return Err(Error::Degenerate("SAT over an empty eligible set".into()));
    }
    if fooled_a > eligible || fooled_b > eligible {
        return Err(Error::Config(format!(
            "fooled counts {fooled_a}/{fooled_b} exceed eligible count {eligible}"
        )));
    }
    if !(epsilon_floor > 0.0 && epsilon_floor < 100.0) {
        return Err(Error::Config(format!("epsilon floor {epsilon_floor} outside (0, 100)")));
    }
    let percent = 100.0 * (fooled_a + fooled_b) as f64 / (2 * eligible) as f64;
    let raw = percent.max(epsilon_floor);
    Ok(SatScore { raw, value: raw.ln() })
}

/// One-directional variant: only the new model's adversarial examples are
/// evaluated on the other model, so there is no ½ factor.
pub fn sat_one_sided_from_counts(
    fooled: usize,
    eligible: usize,
    epsilon_floor: f64,
) -> Result<SatScore> {
    if eligible == 0 {
        return Err(Error::Degenerate("one-sided SAT over an empty eligible set".into()));
    }
    if fooled > eligible {
        return Err(Error::Config(format!("fooled count {fooled} exceeds eligible count {eligible}")));
    }
    if !(epsilon_floor > 0.0 && epsilon_floor < 100.0) {
        return Err(Error::Config(format!("epsilon floor {epsilon_floor} outside (0, 100)")));
    }
    let raw = (100.0 * fooled as f64 / eligible as f64).max(epsilon_floor);
    Ok(SatScore { raw, value: raw.ln() })
}

/// Indices (into the given evaluation batch) that both models classify
/// correctly, each model seeing the images at its own resolution.
pub fn eligible_set(a: &Model, b: &Model, images: &Tensor, labels: &[usize]) -> Result<Vec<usize>> {
    let correct_a = correct_set(a, images, labels)?;
    let correct_b = correct_set(b, images, labels)?;
    Ok(intersect_sorted(&correct_a, &correct_b).into_iter().map(|(_, _, idx)| idx).collect())
}

/// Indices the model classifies correctly, ascending.
fn correct_set(model: &Model, images: &Tensor, labels: &[usize]) -> Result<Vec<usize>> {
    let [h, w, _] = model.input_resolution();
    let view = crate::resize::to_resolution(images, h, w)?;
    let preds = eval::predictions(model, &view)?;
    Ok(preds
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (p, y))| p == y)
        .map(|(i, _)| i)
        .collect())
}

/// Intersects two ascending index lists; yields `(rank_in_a, rank_in_b, value)`.
fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((i, j, a[i]));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Draws the shared evaluation subsample: `max(1, floor(fraction·n))`
/// distinct indices, ascending.
fn draw_subsample(n: usize, cfg: &SatConfig) -> Vec<usize> {
    let m = ((cfg.eval_fraction * n as f64).floor() as usize).clamp(1, n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = stream(cfg.seed, "sat/subsample", 0);
    let (chosen, _) = indices.partial_shuffle(&mut rng, m);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    chosen
}

pub(crate) fn check_models_against(models: &[&Model], eval_set: &Dataset) -> Result<()> {
    eval_set.validate()?;
    for m in models {
        let [_, _, c] = m.input_resolution();
        if c != eval_set.images.shape()[3] {
            return Err(Error::Config(format!(
                "model {} expects {c} channels, eval set {} has {}",
                m.name(),
                eval_set.name,
                eval_set.images.shape()[3]
            )));
        }
        if m.num_classes() != eval_set.num_classes {
            return Err(Error::Config(format!(
                "model {} has {} classes, eval set {} has {}",
                m.name(),
                m.num_classes(),
                eval_set.name,
                eval_set.num_classes
            )));
        }
    }
    Ok(())
}

/// Attacks `model` on the listed evaluation indices, keying every sample's
/// random start by its evaluation-set index.
fn attack_on_indices(
    model: &Model,
    eval_images: &Tensor,
    labels: &[usize],
    indices: &[usize],
    attack_cfg: &AttackConfig,
) -> Result<AdvBatch> {
    let [h, w, _] = model.input_resolution();
    let view = crate::resize::to_resolution(eval_images, h, w)?;
    let clean = view.gather(indices);
    let batch_labels: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    let ids: Vec<u64> = indices.iter().map(|&i| i as u64).collect();
    attack_with_ids(model, &clean, &batch_labels, &ids, attack_cfg)
}

/// Evaluates `target` on a source model's adversarial images (resized to the
/// target's resolution); returns one fooled flag per batch row.
fn fooled_by_transfer(target: &Model, adv: &AdvBatch) -> Result<Vec<bool>> {
    let [h, w, _] = target.input_resolution();
    let view = crate::resize::to_resolution(&adv.adversarial, h, w)?;
    let preds = eval::predictions(target, &view)?;
    Ok(preds.iter().zip(&adv.labels).map(|(p, y)| p != y).collect())
}

/// SAT between one model pair on the shared subsample of `eval_set`.
pub fn sat(a: &Model, b: &Model, eval_set: &Dataset, cfg: &SatConfig) -> Result<SatScore> {
    cfg.validate()?;
    check_models_against(&[a, b], eval_set)?;
    let sub = draw_subsample(eval_set.len(), cfg);
    let images = eval_set.images.gather(&sub);
    let labels: Vec<usize> = sub.iter().map(|&i| eval_set.labels[i]).collect();

    let eligible_local = eligible_set(a, b, &images, &labels)?;
    if eligible_local.is_empty() {
        return Err(Error::Incomparable { a: a.name().to_string(), b: b.name().to_string() });
    }
    // Attack ids are the indices into the *original* evaluation set, so the
    // same sample gets the same adversarial image here and in sat_matrix.
    let eligible_orig: Vec<usize> = eligible_local.iter().map(|&i| sub[i]).collect();
    let local_labels: Vec<usize> = eligible_local.iter().map(|&i| labels[i]).collect();

    let adv = |source: &Model| -> Result<AdvBatch> {
        let [h, w, _] = source.input_resolution();
        let view = crate::resize::to_resolution(&images, h, w)?;
        let clean = view.gather(&eligible_local);
        let ids: Vec<u64> = eligible_orig.iter().map(|&i| i as u64).collect();
        attack_with_ids(source, &clean, &local_labels, &ids, &cfg.attack)
    };
    let adv_a = adv(a)?;
    let adv_b = adv(b)?;

    let fooled_b = fooled_by_transfer(b, &adv_a)?.iter().filter(|&&f| f).count();
    let fooled_a = fooled_by_transfer(a, &adv_b)?.iter().filter(|&&f| f).count();
    sat_from_counts(fooled_a, fooled_b, eligible_local.len(), cfg.epsilon_floor)
}

/// A pair excluded from a similarity matrix, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub a: String,
    pub b: String,
    pub reason: String,
}

/// Full pairwise similarity matrix over a model zoo.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub model_names: Vec<String>,
    /// ln-scale scores; `NaN` marks excluded pairs.
    pub values: Vec<Vec<f64>>,
    /// Clamped pre-log percentages; `NaN` marks excluded pairs.
    pub raw_transfer: Vec<Vec<f64>>,
    /// |X_AB| per pair (0 for excluded pairs).
    pub pair_counts: Vec<Vec<usize>>,
    pub exclusions: Vec<Exclusion>,
    pub config: SatConfig,
    /// Evaluation-set indices of the shared subsample.
    pub subsample: Vec<usize>,
    /// Name and provenance of the evaluation set the matrix was computed on.
    pub eval_name: String,
    pub eval_provenance: String,
}

/// Serialized form: `NaN` becomes `null` so the sidecar is valid JSON.
#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    format: String,
    model_names: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
    raw_transfer: Vec<Vec<Option<f64>>>,
    pair_counts: Vec<Vec<usize>>,
    exclusions: Vec<Exclusion>,
    config: SatConfig,
    subsample: Vec<usize>,
    eval_name: String,
    eval_provenance: String,
}

fn to_nullable(m: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    m.iter()
        .map(|row| row.iter().map(|&v| if v.is_nan() { None } else { Some(v) }).collect())
        .collect()
}

fn from_nullable(m: Vec<Vec<Option<f64>>>) -> Vec<Vec<f64>> {
    m.into_iter()
        .map(|row| row.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
        .collect()
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.model_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.model_names.iter().position(|n| n == name)
    }

    /// Pairs `(row, col)` where an off-diagonal ln-score exceeds the row's
    /// self-score by more than `delta`. Rows with an excluded diagonal are
    /// skipped; excluded off-diagonal entries are skipped.
    pub fn self_maximality_violations(&self, delta: f64) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            let own = self.values[i][i];
            if own.is_nan() {
                continue;
            }
            for j in 0..self.len() {
                if i != j && !self.values[i][j].is_nan() && self.values[i][j] > own + delta {
                    out.push((self.model_names[i].clone(), self.model_names[j].clone()));
                }
            }
        }
        out
    }

    /// CSV view: model-name header row, ln-scale values to six decimals,
    /// empty cells for excluded pairs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for name in &self.model_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, name) in self.model_names.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.len() {
                out.push(',');
                if !self.values[i][j].is_nan() {
                    out.push_str(&format!("{:.6}", self.values[i][j]));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `sat.csv` (ln-scale view) and `sat.json` (full precision:
    /// config, exclusions, per-pair counts, raw percentages) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::io::atomic_write(&dir.join("sat.csv"), self.to_csv().as_bytes())?;
        let doc = MatrixDoc {
            format: SAT_FORMAT.to_string(),
            model_names: self.model_names.clone(),
            values: to_nullable(&self.values),
            raw_transfer: to_nullable(&self.raw_transfer),
            pair_counts: self.pair_counts.clone(),
            exclusions: self.exclusions.clone(),
            config: self.config.clone(),
            subsample: self.subsample.clone(),
            eval_name: self.eval_name.clone(),
            eval_provenance: self.eval_provenance.clone(),
        };
        crate::io::atomic_write(
            &dir.join("sat.json"),
            serde_json::to_string_pretty(&doc)?.as_bytes(),
        )?;
        Ok(())
    }

    /// Reads the JSON sidecar written by [`SimilarityMatrix::save`].
    pub fn load(json_path: &Path) -> Result<SimilarityMatrix> {
        let doc: MatrixDoc = serde_json::from_slice(&std::fs::read(json_path)?)?;
        if doc.format != SAT_FORMAT {
            return Err(Error::Format(format!(
                "expected format {SAT_FORMAT}, found {}",
                doc.format
            )));
        }
        let m = doc.model_names.len();
        let matrix = SimilarityMatrix {
            model_names: doc.model_names,
            values: from_nullable(doc.values),
            raw_transfer: from_nullable(doc.raw_transfer),
            pair_counts: doc.pair_counts,
            exclusions: doc.exclusions,
            config: doc.config,
            subsample: doc.subsample,
            eval_name: doc.eval_name,
            eval_provenance: doc.eval_provenance,
        };
        if matrix.values.len() != m
            || matrix.values.iter().any(|r| r.len() != m)
            || matrix.raw_transfer.len() != m
            || matrix.raw_transfer.iter().any(|r| r.len() != m)
            || matrix.pair_counts.len() != m
            || matrix.pair_counts.iter().any(|r| r.len() != m)
        {
            return Err(Error::Format(format!("similarity matrix is not {m}x{m}")));
        }
        Ok(matrix)
    }
}

/// Computes the full pairwise matrix. Each model is attacked once on its own
/// correctly-classified part of the shared subsample; every pair (including
/// the diagonal self-score) is then scored from those cached batches.
pub fn sat_matrix(models: &[&Model], eval_set: &Dataset, cfg: &SatConfig) -> Result<SimilarityMatrix> {
    cfg.validate()?;
    if models.len() < 2 {
        return Err(Error::Config(format!("similarity matrix needs ≥2 models, got {}", models.len())));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for m in models {
            if !seen.insert(m.name()) {
                return Err(Error::Config(format!("duplicate model name '{}'", m.name())));
            }
        }
    }
    check_models_against(models, eval_set)?;

    let sub = draw_subsample(eval_set.len(), cfg);
    let images = eval_set.images.gather(&sub);
    let labels: Vec<usize> = sub.iter().map(|&i| eval_set.labels[i]).collect();
    let n = models.len();

    // Per model: correctly-classified subsample positions, and the attack on
    // exactly those inputs (ids = original evaluation-set indices).
    struct SourceArtifacts {
        correct: Vec<usize>,
        adv: Option<AdvBatch>,
    }
    let artifacts: Vec<Result<SourceArtifacts>> = models
        .par_iter()
        .map(|model| {
            let correct = correct_set(model, &images, &labels)?;
            if correct.is_empty() {
                return Ok(SourceArtifacts { correct, adv: None });
            }
            let orig: Vec<usize> = correct.iter().map(|&i| sub[i]).collect();
            let [h, w, _] = model.input_resolution();
            let view = crate::resize::to_resolution(&images, h, w)?;
            let clean = view.gather(&correct);
            let batch_labels: Vec<usize> = correct.iter().map(|&i| labels[i]).collect();
            let ids: Vec<u64> = orig.iter().map(|&i| i as u64).collect();
            let adv = attack_with_ids(model, &clean, &batch_labels, &ids, &cfg.attack)?;
            Ok(SourceArtifacts { correct, adv: Some(adv) })
        })
        .collect();
    let artifacts = artifacts.into_iter().collect::<Result<Vec<_>>>()?;

    // Directed transfer tables: fooled[source][target][k] says whether the
    // target misclassifies the source's k-th adversarial image.
    let directed: Vec<Result<Vec<Option<Vec<bool>>>>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let Some(adv) = &artifacts[s].adv else {
                return Ok(vec![None; n]);
            };
            let mut row = Vec::with_capacity(n);
            for t in 0..n {
                row.push(Some(fooled_by_transfer(models[t], adv)?));
            }
            Ok(row)
        })
        .collect();
    let directed = directed.into_iter().collect::<Result<Vec<_>>>()?;

    let mut values = vec![vec![f64::NAN; n]; n];
    let mut raw = vec![vec![f64::NAN; n]; n];
    let mut counts = vec![vec![0usize; n]; n];
    let mut exclusions = Vec::new();
    for i in 0..n {
        for j in i..n {
            let shared = intersect_sorted(&artifacts[i].correct, &artifacts[j].correct);
            if shared.is_empty() {
                exclusions.push(Exclusion {
                    a: models[i].name().to_string(),
                    b: models[j].name().to_string(),
                    reason: "no shared correctly-classified inputs".to_string(),
                });
                continue;
            }
            let fooled_j_by_i = directed[i][j].as_ref().expect("adv exists when correct set is nonempty");
            let fooled_i_by_j = directed[j][i].as_ref().expect("adv exists when correct set is nonempty");
            let mut count_j = 0usize; // j fooled by i's adversarial images
            let mut count_i = 0usize; // i fooled by j's
            for &(rank_i, rank_j, _) in &shared {
                count_j += fooled_j_by_i[rank_i] as usize;
                count_i += fooled_i_by_j[rank_j] as usize;
            }
            let score = sat_from_counts(count_i, count_j, shared.len(), cfg.epsilon_floor)?;
            values[i][j] = score.value;
            values[j][i] = score.value;
            raw[i][j] = score.raw;
            raw[j][i] = score.raw;
            counts[i][j] = shared.len();
            counts[j][i] = shared.len();
        }
    }

    Ok(SimilarityMatrix {
        model_names: models.iter().map(|m| m.name().to_string()).collect(),
        values,
        raw_transfer: raw,
        pair_counts: counts,
        exclusions,
        config: cfg.clone(),
        subsample: sub,
        eval_name: eval_set.name.clone(),
        eval_provenance: eval_set.provenance.clone(),
    })
}

/// One-sided scores of a new model against each zoo member: only the new
/// model's adversarial examples are evaluated (single indicator, no ½
/// factor). Returns one score per zoo member, in order.
pub fn sat_one_sided(
    new_model: &Model,
    zoo: &[&Model],
    eval_set: &Dataset,
    cfg: &SatConfig,
) -> Result<Vec<SatScore>> {
    cfg.validate()?;
    if zoo.is_empty() {
        return Err(Error::Config("one-sided SAT against an empty zoo".into()));
    }
    let mut all = vec![new_model];
    all.extend_from_slice(zoo);
    check_models_against(&all, eval_set)?;

    let sub = draw_subsample(eval_set.len(), cfg);
    let images = eval_set.images.gather(&sub);
    let labels: Vec<usize> = sub.iter().map(|&i| eval_set.labels[i]).collect();

    let correct_new = correct_set(new_model, &images, &labels)?;
    if correct_new.is_empty() {
        return Err(Error::Incomparable {
            a: new_model.name().to_string(),
            b: "entire zoo".to_string(),
        });
    }
    let orig: Vec<usize> = correct_new.iter().map(|&i| sub[i]).collect();
    let [h, w, _] = new_model.input_resolution();
    let view = crate::resize::to_resolution(&images, h, w)?;
    let clean = view.gather(&correct_new);
    let batch_labels: Vec<usize> = correct_new.iter().map(|&i| labels[i]).collect();
    let ids: Vec<u64> = orig.iter().map(|&i| i as u64).collect();
    let adv = attack_with_ids(new_model, &clean, &batch_labels, &ids, &cfg.attack)?;

    zoo.par_iter()
        .map(|member| {
            let correct_m = correct_set(member, &images, &labels)?;
            let shared = intersect_sorted(&correct_new, &correct_m);
            if shared.is_empty() {
                return Err(Error::Incomparable {
                    a: new_model.name().to_string(),
                    b: member.name().to_string(),
                });
            }
            let fooled = fooled_by_transfer(member, &adv)?;
            let count = shared.iter().filter(|&&(rank_new, _, _)| fooled[rank_new]).count();
            sat_one_sided_from_counts(count, shared.len(), cfg.epsilon_floor)
        })
        .collect()
}

/// Inputs where the transferred attacks drive both models to the *same*
/// wrong class: B's prediction on A's adversarial image equals A's
/// prediction on B's adversarial image, and both differ from the label.
/// Batches are joined on sample ids; shared ids must agree on labels.
pub fn misclassification_agreement(
    a: &Model,
    b: &Model,
    adv_a: &AdvBatch,
    adv_b: &AdvBatch,
) -> Result<usize> {
    let rows_b: BTreeMap<u64, usize> =
        adv_b.sample_ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();

    let preds_b_on_a = {
        let [h, w, _] = b.input_resolution();
        let view = crate::resize::to_resolution(&adv_a.adversarial, h, w)?;
        eval::predictions(b, &view)?
    };
    let preds_a_on_b = {
        let [h, w, _] = a.input_resolution();
        let view = crate::resize::to_resolution(&adv_b.adversarial, h, w)?;
        eval::predictions(a, &view)?
    };

    let mut agreement = 0usize;
    for (row_a, &id) in adv_a.sample_ids.iter().enumerate() {
        let Some(&row_b) = rows_b.get(&id) else { continue };
        if adv_a.labels[row_a] != adv_b.labels[row_b] {
            return Err(Error::Config(format!(
                "sample {id} labeled {} in one batch, {} in the other",
                adv_a.labels[row_a], adv_b.labels[row_b]
            )));
        }
        let y = adv_a.labels[row_a];
        let pb = preds_b_on_a[row_a];
        let pa = preds_a_on_b[row_b];
        if pb == pa && pb != y {
            agreement += 1;
        }
    }
    Ok(agreement)
}

/// Per-sample transfer indicators for one pair, computed over the *whole*
/// provided evaluation set. The table lets any subset's score be read off
/// without rerunning attacks, bit-identical to attacking that subset
/// directly (adversarial examples are keyed by evaluation-set index).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairIndicators {
    pub a: String,
    pub b: String,
    /// Evaluation-set indices in X_AB, ascending.
    pub ids: Vec<usize>,
    /// Per eligible input: does B misclassify A's adversarial image?
    pub fooled_b_on_adv_a: Vec<bool>,
    /// Per eligible input: does A misclassify B's adversarial image?
    pub fooled_a_on_adv_b: Vec<bool>,
    pub epsilon_floor: f64,
    /// Size of the evaluation set the table was computed over.
    pub eval_len: usize,
}

impl PairIndicators {
    /// Score over the full table.
    pub fn full(&self) -> Result<SatScore> {
        let fa = self.fooled_a_on_adv_b.iter().filter(|&&f| f).count();
        let fb = self.fooled_b_on_adv_a.iter().filter(|&&f| f).count();
        sat_from_counts(fa, fb, self.ids.len(), self.epsilon_floor)
    }

    /// Score restricted to an evaluation subset (ascending indices).
    /// Eligible inputs outside `subset` are dropped; an empty intersection
    /// is a degenerate draw.
    pub fn on_subset(&self, subset: &[usize]) -> Result<SatScore> {
        let shared = intersect_sorted(&self.ids, subset);
        if shared.is_empty() {
            return Err(Error::Degenerate(
                "evaluation subset shares no eligible inputs with the pair".into(),
            ));
        }
        let mut fa = 0usize;
        let mut fb = 0usize;
        for &(rank, _, _) in &shared {
            fa += self.fooled_a_on_adv_b[rank] as usize;
            fb += self.fooled_b_on_adv_a[rank] as usize;
        }
        sat_from_counts(fa, fb, shared.len(), self.epsilon_floor)
    }
}

/// Builds the per-sample indicator table for one pair over the whole
/// evaluation set (no subsampling; subsets are applied afterwards).
pub fn pair_indicator_table(
    a: &Model,
    b: &Model,
    eval_set: &Dataset,
    attack_cfg: &AttackConfig,
    epsilon_floor: f64,
) -> Result<PairIndicators> {
    check_models_against(&[a, b], eval_set)?;
    let labels = &eval_set.labels;
    let eligible = eligible_set(a, b, &eval_set.images, labels)?;
    if eligible.is_empty() {
        return Err(Error::Incomparable { a: a.name().to_string(), b: b.name().to_string() });
    }
    let adv_a = attack_on_indices(a, &eval_set.images, labels, &eligible, attack_cfg)?;
    let adv_b = attack_on_indices(b, &eval_set.images, labels, &eligible, attack_cfg)?;
    let fooled_b_on_adv_a = fooled_by_transfer(b, &adv_a)?;
    let fooled_a_on_adv_b = fooled_by_transfer(a, &adv_b)?;
    Ok(PairIndicators {
        a: a.name().to_string(),
        b: b.name().to_string(),
        ids: eligible,
        fooled_b_on_adv_a,
        fooled_a_on_adv_b,
        epsilon_floor,
        eval_len: eval_set.len(),
    })
}

/// Spread of a pair's score across repeated evaluation subsamples of one
/// size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub size: usize,
    pub draws: usize,
    /// Whether the draws partition the evaluation set (true when
    /// `size · draws` fits) or are independent seeded draws.
    pub disjoint: bool,
    /// Mean and sample standard deviation of the raw (percentage) scores.
    pub mean_raw: f64,
    pub std_raw: f64,
    /// Mean and sample standard deviation of the ln-scale scores.
    pub mean_value: f64,
    pub std_value: f64,
}

/// Measures subsample stability: for each requested size, scores `draws`
/// subsamples of the evaluation set and reports the spread. Sizes where
/// `size · draws ≤ eval_len` use disjoint blocks of one shuffle; larger
/// sizes fall back to independent draws without replacement.
pub fn subsample_stability(
    table: &PairIndicators,
    sizes: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<StabilityRow>> {
    if draws < 2 {
        return Err(Error::Config(format!("stability needs ≥2 draws, got {draws}")));
    }
    let n = table.eval_len;
    sizes
        .iter()
        .map(|&size| {
            if size == 0 || size > n {
                return Err(Error::Infeasible(format!(
                    "subsample size {size} outside [1, {n}]"
                )));
            }
            let disjoint = size * draws <= n;
            let mut scores = Vec::with_capacity(draws);
            if disjoint {
                let mut indices: Vec<usize> = (0..n).collect();
                let mut rng = stream(seed, "sat/stability-blocks", size as u64);
                indices.shuffle(&mut rng);
                for d in 0..draws {
                    let mut block: Vec<usize> = indices[d * size..(d + 1) * size].to_vec();
                    block.sort_unstable();
                    scores.push(table.on_subset(&block)?);
                }
            } else {
                for d in 0..draws {
                    let mut indices: Vec<usize> = (0..n).collect();
                    let mut rng =
                        stream(seed, &format!("sat/stability-draw/{size}"), d as u64);
                    let (chosen, _) = indices.partial_shuffle(&mut rng, size);
                    let mut chosen = chosen.to_vec();
                    chosen.sort_unstable();
                    scores.push(table.on_subset(&chosen)?);
                }
            }
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = |xs: &[f64], m: f64| {
                (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
            };
            let raws: Vec<f64> = scores.iter().map(|s| s.raw).collect();
            let vals: Vec<f64> = scores.iter().map(|s| s.value).collect();
            let (mr, mv) = (mean(&raws), mean(&vals));
            Ok(StabilityRow {
                size,
                draws,
                disjoint,
                mean_raw: mr,
                std_raw: sd(&raws, mr),
                mean_value: mv,
                std_value: sd(&vals, mv),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archfeat::ArchFeatureRecord;
    use crate::nn::{LayerSpec, ModelSpec};
    use crate::zoo::Split;

    #[test]
    fn worked_score_cases() {
        // Perfect two-way transfer.
        let s = sat_from_counts(100, 100, 100, 0.01).unwrap();
        assert_eq!(s.raw, 100.0);
        assert!((s.value - 100.0_f64.ln()).abs() < 1e-15);

        // Zero transfer hits the floor.
        let s = sat_from_counts(0, 0, 100, 0.01).unwrap();
        assert_eq!(s.raw, 0.01);
        assert!((s.value - 0.01_f64.ln()).abs() < 1e-15);

        // Fooled fractions 0.30 and 0.50 average to 40%.
        let s = sat_from_counts(30, 50, 100, 0.01).unwrap();
        assert_eq!(s.raw, 40.0);
        assert!((s.value - 40.0_f64.ln()).abs() < 1e-15);

        // The clamp applies to the symmetric average, not per direction:
        // 0% one way and 30% the other averages to 15%, above the floor.
        let s = sat_from_counts(0, 30, 100, 0.01).unwrap();
        assert_eq!(s.raw, 15.0);
    }

    #[test]
    fn count_kernel_rejects_bad_inputs() {
        assert!(sat_from_counts(1, 1, 0, 0.01).is_err());
        assert!(sat_from_counts(5, 1, 4, 0.01).is_err());
        assert!(sat_from_counts(1, 1, 4, 0.0).is_err());
        assert!(sat_from_counts(1, 1, 4, 100.0).is_err());
        assert!(sat_one_sided_from_counts(5, 4, 0.01).is_err());
        let s = sat_one_sided_from_counts(4, 4, 0.01).unwrap();
        assert!((s.value - 100.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn subsample_draw_is_deterministic_and_in_range() {
        let cfg = SatConfig { eval_fraction: 0.25, seed: 7, ..SatConfig::default() };
        let a = draw_subsample(200, &cfg);
        let b = draw_subsample(200, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&i| i < 200));

        let all = draw_subsample(10, &SatConfig { eval_fraction: 1.0, ..SatConfig::default() });
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn intersect_sorted_reports_ranks() {
        let a = vec![1, 3, 5, 9];
        let b = vec![0, 3, 4, 5, 10];
        let shared = intersect_sorted(&a, &b);
        assert_eq!(shared, vec![(1, 1, 3), (2, 3, 5)]);
    }

    /// A model that predicts class 0 everywhere (zero weights, tie broken to
    /// the lowest index).
    fn constant_model(name: &str) -> Model {
        let spec = ModelSpec {
            name: name.into(),
            input_resolution: [2, 2, 1],
            num_classes: 2,
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }],
            arch_features: ArchFeatureRecord::placeholder(),
        };
        let zeros = |shape: Vec<usize>| {
            let numel = shape.iter().product();
            Tensor::new(shape, vec![0.0; numel]).unwrap()
        };
        let parts: BTreeMap<String, Tensor> = [
            ("layer01.weight".to_string(), zeros(vec![4, 2])),
            ("layer01.bias".to_string(), zeros(vec![2])),
        ]
        .into();
        Model::from_parts(spec, parts, Default::default()).unwrap()
    }

    #[test]
    fn empty_eligible_set_is_incomparable() {
        let a = constant_model("always-zero-a");
        let b = constant_model("always-zero-b");
        let eval_set = Dataset {
            name: "all-ones".into(),
            images: Tensor::new(vec![6, 2, 2, 1], vec![0.5; 24]).unwrap(),
            labels: vec![1; 6],
            num_classes: 2,
            split: Split::Eval,
            provenance: "test".into(),
        };
        let cfg = SatConfig { eval_fraction: 1.0, ..SatConfig::default() };
        match sat(&a, &b, &eval_set, &cfg) {
            Err(Error::Incomparable { .. }) => {}
            other => panic!("expected incomparable, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SatConfig::default().validate().is_ok());
        assert!(SatConfig { epsilon_floor: 0.0, ..SatConfig::default() }.validate().is_err());
        assert!(SatConfig { epsilon_floor: 100.0, ..SatConfig::default() }.validate().is_err());
        assert!(SatConfig { eval_fraction: 0.0, ..SatConfig::default() }.validate().is_err());
        assert!(SatConfig { eval_fraction: 1.1, ..SatConfig::default() }.validate().is_err());
    }
}
