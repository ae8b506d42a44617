//! Logit-averaging ensembles and the analyses built on them.
//!
//! An ensemble predicts the argmax of its members' mean logits. The error
//! reduction rate `ERR = 1 − Err_ens / mean(member errors)` measures how far
//! the ensemble beats its average member; the all-wrong ratio counts inputs
//! every member misclassifies. The diversity protocol compares mean ERR of
//! ensembles whose members span exactly `k` similarity clusters, and the
//! similarity-vs-ensemble report correlates pair similarity with 2-ensemble
//! ERR.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{eval, Model};
use crate::rng::stream;
use crate::sat::SimilarityMatrix;
use crate::stats::{self, Correlation};
use crate::tensor::Tensor;
use crate::zoo::Dataset;

/// One ensemble evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EnsembleResult {
    pub member_names: Vec<String>,
    /// Fraction of evaluation inputs the mean-logit prediction gets wrong.
    pub top1_error: f64,
    pub member_errors: Vec<f64>,
    /// `1 − top1_error / mean(member_errors)`; 0 when members are perfect.
    pub err_reduction_rate: f64,
    /// Fraction of inputs misclassified by every member simultaneously.
    pub all_wrong_ratio: f64,
}

/// Per-model logits and predictions on a fixed evaluation set, computed once
/// and shared read-only by every subset evaluation.
#[derive(Debug, Clone)]
pub struct LogitCache {
    names: Vec<String>,
    /// Per model: `n × num_classes`, row-major.
    logits: Vec<Vec<f64>>,
    predictions: Vec<Vec<usize>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LogitCache {
    /// Evaluates every model on the set (each at its own resolution).
    pub fn new(models: &[&Model], eval_set: &Dataset) -> Result<LogitCache> {
        if models.is_empty() {
            return Err(Error::EmptyBatch("logit cache over zero models".into()));
        }
        crate::sat::check_models_against(models, eval_set)?;
        let per_model: Vec<Result<Vec<f64>>> = models
            .par_iter()
            .map(|m| {
                let [h, w, _] = m.input_resolution();
                let view = crate::resize::to_resolution(&eval_set.images, h, w)?;
                let out = eval::logits(m, &view)?;
                Ok(out.data().iter().map(|&v| v as f64).collect())
            })
            .collect();
        let logits = per_model.into_iter().collect::<Result<Vec<_>>>()?;
        LogitCache::from_parts(
            models.iter().map(|m| m.name().to_string()).collect(),
            logits,
            eval_set.labels.clone(),
            eval_set.num_classes,
        )
    }

    /// Builds a cache from precomputed logits (`n × num_classes` per model).
    pub fn from_parts(
        names: Vec<String>,
        logits: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<LogitCache> {
        if names.is_empty() || names.len() != logits.len() {
            return Err(Error::Config(format!(
                "{} names vs {} logit tables",
                names.len(),
                logits.len()
            )));
        }
        if labels.is_empty() || num_classes == 0 {
            return Err(Error::EmptyBatch("logit cache needs samples and classes".into()));
        }
        let expect = labels.len() * num_classes;
        if logits.iter().any(|l| l.len() != expect) {
            return Err(Error::Config(format!(
                "each logit table must hold {expect} values ({} samples × {num_classes} classes)",
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y >= num_classes) {
            return Err(Error::Config("label out of class range".into()));
        }
        let predictions = logits.iter().map(|l| argmax_rows_f64(l, num_classes)).collect();
        Ok(LogitCache { names, logits, predictions, labels, num_classes })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_models(&self) -> usize {
        self.names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    /// Top-1 error of one member on its own.
    pub fn member_error(&self, model: usize) -> f64 {
        let wrong = self.predictions[model]
            .iter()
            .zip(&self.labels)
            .filter(|(p, y)| p != y)
            .count();
        wrong as f64 / self.labels.len() as f64
    }

    /// Evaluates the ensemble of the given member indices (duplicates
    /// allowed). Logits are averaged in ascending member order, so the
    /// result is independent of how the subset was produced.
    pub fn ensemble_of(&self, members: &[usize]) -> Result<EnsembleResult> {
        if members.is_empty() {
            return Err(Error::EmptyBatch("ensemble of zero members".into()));
        }
        if let Some(&bad) = members.iter().find(|&&m| m >= self.n_models()) {
            return Err(Error::Config(format!(
                "member index {bad} out of range ({} models cached)",
                self.n_models()
            )));
        }
        let mut members = members.to_vec();
        members.sort_unstable();

        let n = self.n_samples();
        let k = self.num_classes;
        let mut mean = vec![0.0f64; n * k];
        for &m in &members {
            for (acc, &v) in mean.iter_mut().zip(&self.logits[m]) {
                *acc += v;
            }
        }
        let inv = 1.0 / members.len() as f64;
        for v in &mut mean {
            *v *= inv;
        }
        let ens_pred = argmax_rows_f64(&mean, k);
        let wrong = ens_pred.iter().zip(&self.labels).filter(|(p, y)| p != y).count();
        let top1_error = wrong as f64 / n as f64;

        let member_errors: Vec<f64> = members.iter().map(|&m| self.member_error(m)).collect();
        let mean_member_error = member_errors.iter().sum::<f64>() / member_errors.len() as f64;
        // Perfect members leave no error to reduce; define ERR = 0 there.
        let err_reduction_rate =
            if mean_member_error == 0.0 { 0.0 } else { 1.0 - top1_error / mean_member_error };

        let all_wrong = (0..n)
            .filter(|&i| members.iter().all(|&m| self.predictions[m][i] != self.labels[i]))
            .count();

        Ok(EnsembleResult {
            member_names: members.iter().map(|&m| self.names[m].clone()).collect(),
            top1_error,
            member_errors,
            err_reduction_rate,
            all_wrong_ratio: all_wrong as f64 / n as f64,
        })
    }
}

fn argmax_rows_f64(logits: &[f64], num_classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(num_classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Evaluates one ensemble of at least two models on an evaluation set.
pub fn ensemble_error(models: &[&Model], eval_set: &Dataset) -> Result<EnsembleResult> {
    if models.len() < 2 {
        return Err(Error::Config(format!(
            "an ensemble needs at least 2 members, got {}",
            models.len()
        )));
    }
    let cache = LogitCache::new(models, eval_set)?;
    let all: Vec<usize> = (0..models.len()).collect();
    cache.ensemble_of(&all)
}

/// Configuration for the diversity protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DiversityConfig {
    /// Ensemble size N.
    pub ensemble_size: usize,
    /// Exact number of distinct clusters the members must span.
    pub clusters_spanned: usize,
    /// Monte-Carlo subsets to draw; 0 enumerates every valid subset.
    pub trials: usize,
    pub seed: u64,
    /// Uniform rejection draws per trial before constructive sampling.
    pub rejection_cap: usize,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            ensemble_size: 2,
            clusters_spanned: 2,
            trials: 100,
            seed: 0,
            rejection_cap: 200,
        }
    }
}

/// Outcome of the diversity protocol at one (N, k) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DiversityOutcome {
    pub ensemble_size: usize,
    pub clusters_spanned: usize,
    pub subsets_evaluated: usize,
    /// True when every valid subset was enumerated instead of sampled.
    pub exhaustive: bool,
    pub mean_err_reduction: f64,
    pub err_reductions: Vec<f64>,
}

/// Number of distinct clusters a subset touches.
fn span(members: &[usize], cluster_of: &[usize]) -> usize {
    let mut seen: Vec<usize> = members.iter().map(|&m| cluster_of[m]).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

const EXHAUSTIVE_SUBSET_CAP: usize = 100_000;

/// Mean ERR over ensembles of `N` distinct members spanning exactly `k`
/// clusters. Sampling is uniform over valid subsets via rejection (capped);
/// when the cap trips, a constructive draw (one member from each of the k
/// largest clusters, rest from their union) keeps the trial valid at the
/// cost of exact uniformity. `trials = 0` enumerates every valid subset.
pub fn diversity_protocol(
    cache: &LogitCache,
    cluster_of: &[usize],
    cfg: &DiversityConfig,
) -> Result<DiversityOutcome> {
    let m = cache.n_models();
    let (n, k) = (cfg.ensemble_size, cfg.clusters_spanned);
    if cluster_of.len() != m {
        return Err(Error::Config(format!(
            "{} cluster labels for {m} cached models",
            cluster_of.len()
        )));
    }
    if n == 0 || k == 0 || k > n || n > m {
        return Err(Error::Config(format!(
            "diversity protocol needs 1 ≤ k ≤ N ≤ zoo size; got N={n}, k={k}, zoo={m}"
        )));
    }
    // Feasibility: the k largest clusters must hold ≥ N members between them.
    let mut cluster_sizes: std::collections::BTreeMap<usize, usize> = Default::default();
    for &c in cluster_of {
        *cluster_sizes.entry(c).or_default() += 1;
    }
    let mut sizes: Vec<usize> = cluster_sizes.values().copied().collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    if sizes.len() < k || sizes.iter().take(k).sum::<usize>() < n {
        return Err(Error::Degenerate(format!(
            "infeasible: no {n}-subset can span exactly {k} clusters ({} clusters, sizes {sizes:?})",
            sizes.len()
        )));
    }

    let subsets: Vec<Vec<usize>> = if cfg.trials == 0 {
        enumerate_spanning_subsets(m, n, k, cluster_of)?
    } else {
        (0..cfg.trials)
            .map(|t| draw_spanning_subset(m, n, k, cluster_of, cfg, t as u64))
            .collect()
    };
    if subsets.is_empty() {
        return Err(Error::Degenerate(format!(
            "infeasible: enumeration found no {n}-subset spanning exactly {k} clusters"
        )));
    }

    let err_reductions: Vec<f64> = subsets
        .par_iter()
        .map(|s| cache.ensemble_of(s).map(|e| e.err_reduction_rate))
        .collect::<Result<Vec<_>>>()?;
    let mean = err_reductions.iter().sum::<f64>() / err_reductions.len() as f64;
    Ok(DiversityOutcome {
        ensemble_size: n,
        clusters_spanned: k,
        subsets_evaluated: err_reductions.len(),
        exhaustive: cfg.trials == 0,
        mean_err_reduction: mean,
        err_reductions,
    })
}

/// All N-subsets of 0..m spanning exactly k clusters, lexicographic order.
fn enumerate_spanning_subsets(
    m: usize,
    n: usize,
    k: usize,
    cluster_of: &[usize],
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::with_capacity(n);
    fn recurse(
        start: usize,
        m: usize,
        n: usize,
        k: usize,
        cluster_of: &[usize],
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) -> Result<()> {
        if current.len() == n {
            if span(current, cluster_of) == k {
                if out.len() >= EXHAUSTIVE_SUBSET_CAP {
                    return Err(Error::Config(format!(
                        "exhaustive enumeration exceeds {EXHAUSTIVE_SUBSET_CAP} subsets; use sampling"
                    )));
                }
                out.push(current.clone());
            }
            return Ok(());
        }
        for i in start..m {
            current.push(i);
            recurse(i + 1, m, n, k, cluster_of, current, out)?;
            current.pop();
        }
        Ok(())
    }
    recurse(0, m, n, k, cluster_of, &mut current, &mut out)?;
    Ok(out)
}

/// One seeded draw of an N-subset spanning exactly k clusters.
fn draw_spanning_subset(
    m: usize,
    n: usize,
    k: usize,
    cluster_of: &[usize],
    cfg: &DiversityConfig,
    trial: u64,
) -> Vec<usize> {
    // Uniform rejection over N-subsets.
    let mut rng = stream(cfg.seed, "ensemble/diversity-reject", trial);
    for _ in 0..cfg.rejection_cap.max(1) {
        let mut pool: Vec<usize> = (0..m).collect();
        let (chosen, _) = pool.partial_shuffle(&mut rng, n);
        let mut subset = chosen.to_vec();
        subset.sort_unstable();
        if span(&subset, cluster_of) == k {
            return subset;
        }
    }
    // Constructive fallback: the k largest clusters (ties to the lowest
    // cluster id) are guaranteed feasible by the entry check. One random
    // member from each, then the remainder uniformly from their union.
    let mut rng = stream(cfg.seed, "ensemble/diversity-construct", trial);
    let mut by_cluster: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &c) in cluster_of.iter().enumerate() {
        by_cluster.entry(c).or_default().push(i);
    }
    let mut clusters: Vec<&Vec<usize>> = by_cluster.values().collect();
    clusters.sort_by_key(|v| std::cmp::Reverse(v.len()));
    let chosen_clusters = &clusters[..k];
    let mut subset: Vec<usize> = chosen_clusters
        .iter()
        .map(|members| members[rng.gen_range(0..members.len())])
        .collect();
    let mut rest: Vec<usize> = chosen_clusters
        .iter()
        .flat_map(|members| members.iter().copied())
        .filter(|i| !subset.contains(i))
        .collect();
    rest.sort_unstable();
    let (fill, _) = rest.partial_shuffle(&mut rng, n - k);
    subset.extend_from_slice(fill);
    subset.sort_unstable();
    subset
}

/// Mean ERR over `trials` uniformly-drawn N-subsets (no cluster constraint):
/// the "random selection" baseline the protocol is compared against.
pub fn random_selection_baseline(
    cache: &LogitCache,
    ensemble_size: usize,
    trials: usize,
    seed: u64,
) -> Result<DiversityOutcome> {
    let m = cache.n_models();
    if ensemble_size == 0 || ensemble_size > m {
        return Err(Error::Config(format!(
            "baseline needs 1 ≤ N ≤ zoo size; got N={ensemble_size}, zoo={m}"
        )));
    }
    if trials == 0 {
        return Err(Error::Config("baseline needs at least one trial".into()));
    }
    let subsets: Vec<Vec<usize>> = (0..trials)
        .map(|t| {
            let mut rng = stream(seed, "ensemble/random", t as u64);
            let mut pool: Vec<usize> = (0..m).collect();
            let (chosen, _) = pool.partial_shuffle(&mut rng, ensemble_size);
            let mut subset = chosen.to_vec();
            subset.sort_unstable();
            subset
        })
        .collect();
    let err_reductions: Vec<f64> = subsets
        .par_iter()
        .map(|s| cache.ensemble_of(s).map(|e| e.err_reduction_rate))
        .collect::<Result<Vec<_>>>()?;
    let mean = err_reductions.iter().sum::<f64>() / err_reductions.len() as f64;
    Ok(DiversityOutcome {
        ensemble_size,
        clusters_spanned: 0,
        subsets_evaluated: err_reductions.len(),
        exhaustive: false,
        mean_err_reduction: mean,
        err_reductions,
    })
}

/// One 2-ensemble data point: pair similarity against error reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PairErrPoint {
    pub a: String,
    pub b: String,
    pub similarity: f64,
    pub err_reduction: f64,
}

/// Correlations between pair similarity and 2-ensemble ERR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimilarityErrReport {
    pub pairs: Vec<PairErrPoint>,
    pub pearson: Option<Correlation>,
    pub spearman: Option<Correlation>,
    /// Set when the correlation is undefined (constant inputs).
    pub degenerate: Option<String>,
}

impl SimilarityErrReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model-a,model-b,similarity,err-reduction\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                p.a, p.b, p.similarity, p.err_reduction
            ));
        }
        out
    }
}

/// Minimum pairs before the correlation is considered meaningful.
pub const MIN_CORRELATION_PAIRS: usize = 8;

/// Correlates two paired series, reporting degeneracy instead of failing.
fn correlate(xs: &[f64], ys: &[f64]) -> (Option<Correlation>, Option<Correlation>, Option<String>) {
    match (stats::pearson(xs, ys), stats::spearman(xs, ys)) {
        (Ok(p), Ok(s)) => (Some(p), Some(s), None),
        (p, s) => {
            let reason = [p.err(), s.err()]
                .into_iter()
                .flatten()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            (None, None, Some(reason))
        }
    }
}

/// Evaluates every comparable 2-ensemble in the similarity matrix and
/// correlates pair similarity with ERR. Cache rows are matched to matrix
/// rows by model name; refuses underpowered inputs (< 8 pairs).
pub fn similarity_vs_ensemble(
    sm: &SimilarityMatrix,
    cache: &LogitCache,
) -> Result<SimilarityErrReport> {
    let lookup: Vec<usize> = sm
        .model_names
        .iter()
        .map(|name| {
            cache.names.iter().position(|n| n == name).ok_or_else(|| {
                Error::Config(format!("model {name} from the similarity matrix is not cached"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pairs = Vec::new();
    for i in 0..sm.len() {
        for j in i + 1..sm.len() {
            let value = sm.values[i][j];
            if value.is_nan() {
                continue; // excluded pair
            }
            let ens = cache.ensemble_of(&[lookup[i], lookup[j]])?;
            pairs.push(PairErrPoint {
                a: sm.model_names[i].clone(),
                b: sm.model_names[j].clone(),
                similarity: value,
                err_reduction: ens.err_reduction_rate,
            });
        }
    }
    if pairs.len() < MIN_CORRELATION_PAIRS {
        return Err(Error::Degenerate(format!(
            "underpowered: {} comparable pairs, need {MIN_CORRELATION_PAIRS}",
            pairs.len()
        )));
    }
    let sims: Vec<f64> = pairs.iter().map(|p| p.similarity).collect();
    let errs: Vec<f64> = pairs.iter().map(|p| p.err_reduction).collect();
    let (pearson, spearman, degenerate) = correlate(&sims, &errs);
    Ok(SimilarityErrReport { pairs, pearson, spearman, degenerate })
}

/// Resizes and evaluates each model's logits on an arbitrary image tensor —
/// the cross-evaluation entry point (similarity measured on one dataset,
/// ensembles scored on another).
pub fn cache_on_images(
    models: &[&Model],
    images: &Tensor,
    labels: &[usize],
    num_classes: usize,
) -> Result<LogitCache> {
    let set = Dataset {
        name: "cross-eval".into(),
        images: images.clone(),
        labels: labels.to_vec(),
        num_classes,
        split: crate::zoo::Split::Eval,
        provenance: "in-memory cross-eval tensor".into(),
    };
    LogitCache::new(models, &set)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cache with hand-authored logits: 2 classes, every label 0.
    fn hand_cache(tables: Vec<Vec<f64>>, n: usize) -> LogitCache {
        let names = (0..tables.len()).map(|i| format!("m{i}")).collect();
        LogitCache::from_parts(names, tables, vec![0; n], 2).unwrap()
    }

    #[test]
    fn duplicated_members_reduce_nothing() {
        // Model wrong on sample 2 of 3.
        let logits = vec![2.0, 1.0, 3.0, 0.0, 0.0, 5.0];
        let cache = hand_cache(vec![logits.clone(), logits], 3);
        let ens = cache.ensemble_of(&[0, 1]).unwrap();
        assert_eq!(ens.err_reduction_rate, 0.0);
        assert!((ens.top1_error - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ens.member_errors, vec![1.0 / 3.0, 1.0 / 3.0]);
        assert!((ens.all_wrong_ratio - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn err_matches_hand_arithmetic() {
        // 50 samples, label 0. A wrong on 0..5 (10%), B wrong on 5..15
        // (20%), ensemble wrong on exactly 6 (12%) → ERR = 1 − 12/15 = 0.2.
        let n = 50;
        let mut a = Vec::with_capacity(2 * n);
        let mut b = Vec::with_capacity(2 * n);
        for i in 0..n {
            let (al, bl) = match i {
                0..=3 => ([0.0, 10.0], [1.0, 0.0]),  // A strongly wrong → ens wrong
                4 => ([0.0, 1.0], [10.0, 0.0]),      // A weakly wrong → ens right
                5 | 6 => ([1.0, 0.0], [0.0, 10.0]),  // B strongly wrong → ens wrong
                7..=14 => ([10.0, 0.0], [0.0, 1.0]), // B weakly wrong → ens right
                _ => ([1.0, 0.0], [1.0, 0.0]),
            };
            a.extend_from_slice(&al);
            b.extend_from_slice(&bl);
        }
        let cache = hand_cache(vec![a, b], n);
        let ens = cache.ensemble_of(&[0, 1]).unwrap();
        assert!((ens.member_errors[0] - 0.10).abs() < 1e-15);
        assert!((ens.member_errors[1] - 0.20).abs() < 1e-15);
        assert!((ens.top1_error - 0.12).abs() < 1e-15);
        assert!((ens.err_reduction_rate - 0.20).abs() < 1e-12);
        // Nobody is wrong on the same sample → all-wrong ratio 0.
        assert_eq!(ens.all_wrong_ratio, 0.0);
    }

    #[test]
    fn all_wrong_ratio_never_grows_with_members() {
        // Deterministic pseudo-random logits for 4 models over 40 samples.
        let n = 40;
        let tables: Vec<Vec<f64>> = (0..4)
            .map(|m| {
                let mut rng = stream(m, "ensemble-test/logits", 0);
                (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            })
            .collect();
        let cache = hand_cache(tables, n);
        let mut previous = 1.0;
        for size in 1..=4 {
            let members: Vec<usize> = (0..size).collect();
            let ens = cache.ensemble_of(&members).unwrap();
            assert!(
                ens.all_wrong_ratio <= previous + 1e-15,
                "all-wrong grew at size {size}"
            );
            // Also bounded by the best member.
            let min_err =
                ens.member_errors.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(ens.all_wrong_ratio <= min_err + 1e-15);
            previous = ens.all_wrong_ratio;
        }
    }

    #[test]
    fn subset_order_does_not_matter() {
        let n = 10;
        let tables: Vec<Vec<f64>> = (0..3)
            .map(|m| {
                let mut rng = stream(m, "ensemble-test/order", 0);
                (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            })
            .collect();
        let cache = hand_cache(tables, n);
        let a = cache.ensemble_of(&[2, 0, 1]).unwrap();
        let b = cache.ensemble_of(&[0, 1, 2]).unwrap();
        assert_eq!(a, b);
    }

    fn four_model_cache() -> LogitCache {
        let n = 30;
        let tables: Vec<Vec<f64>> = (0..4)
            .map(|m| {
                let mut rng = stream(7 + m, "ensemble-test/protocol", 0);
                (0..2 * n)
                    .map(|i| {
                        // Bias toward class 0 (the label) so errors vary.
                        let v: f64 = rng.gen_range(-1.0..1.0);
                        if i % 2 == 0 {
                            v + 0.3
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        hand_cache(tables, n)
    }

    #[test]
    fn exhaustive_diversity_equals_hand_mean() {
        let cache = four_model_cache();
        let clusters = vec![0, 0, 1, 1];
        let cfg = DiversityConfig {
            ensemble_size: 2,
            clusters_spanned: 2,
            trials: 0,
            ..DiversityConfig::default()
        };
        let got = diversity_protocol(&cache, &clusters, &cfg).unwrap();
        assert!(got.exhaustive);
        assert_eq!(got.subsets_evaluated, 4); // (0,2) (0,3) (1,2) (1,3)
        let hand: f64 = [[0, 2], [0, 3], [1, 2], [1, 3]]
            .iter()
            .map(|s| cache.ensemble_of(s).unwrap().err_reduction_rate)
            .sum::<f64>()
            / 4.0;
        assert!((got.mean_err_reduction - hand).abs() < 1e-15);
    }

    #[test]
    fn sampled_diversity_approaches_the_exhaustive_mean() {
        let cache = four_model_cache();
        let clusters = vec![0, 0, 1, 1];
        let exhaustive = diversity_protocol(
            &cache,
            &clusters,
            &DiversityConfig {
                ensemble_size: 2,
                clusters_spanned: 2,
                trials: 0,
                ..DiversityConfig::default()
            },
        )
        .unwrap();
        let sampled = diversity_protocol(
            &cache,
            &clusters,
            &DiversityConfig {
                ensemble_size: 2,
                clusters_spanned: 2,
                trials: 800,
                seed: 5,
                ..DiversityConfig::default()
            },
        )
        .unwrap();
        assert_eq!(sampled.subsets_evaluated, 800);
        assert!(
            (sampled.mean_err_reduction - exhaustive.mean_err_reduction).abs() < 0.05,
            "sampled {} vs exhaustive {}",
            sampled.mean_err_reduction,
            exhaustive.mean_err_reduction
        );
    }

    #[test]
    fn single_member_ensembles_have_zero_err() {
        let cache = four_model_cache();
        let clusters = vec![0, 1, 2, 3];
        let cfg = DiversityConfig {
            ensemble_size: 1,
            clusters_spanned: 1,
            trials: 10,
            ..DiversityConfig::default()
        };
        let got = diversity_protocol(&cache, &clusters, &cfg).unwrap();
        assert!(got.err_reductions.iter().all(|&e| e == 0.0));
        assert_eq!(got.mean_err_reduction, 0.0);
    }

    #[test]
    fn infeasible_protocol_is_reported() {
        let cache = four_model_cache();
        // Only two clusters exist; spanning three is impossible.
        let err = diversity_protocol(
            &cache,
            &[0, 0, 1, 1],
            &DiversityConfig {
                ensemble_size: 3,
                clusters_spanned: 3,
                ..DiversityConfig::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("infeasible"), "{err}");
        // k larger than N is a config error, not infeasibility.
        assert!(diversity_protocol(
            &cache,
            &[0, 1, 2, 3],
            &DiversityConfig { ensemble_size: 2, clusters_spanned: 3, ..DiversityConfig::default() }
        )
        .is_err());
    }

    #[test]
    fn constructed_anticorrelation_is_detected() {
        // ERR = −similarity + small deterministic ripple.
        let sims: Vec<f64> = (0..20).map(|i| i as f64 / 5.0).collect();
        let errs: Vec<f64> = sims.iter().map(|s| -s + 0.01 * (s * 9.7).sin()).collect();
        let (p, s, degenerate) = correlate(&sims, &errs);
        assert!(degenerate.is_none());
        assert!(p.unwrap().coefficient < -0.9);
        assert!(s.unwrap().coefficient < -0.9);
    }

    #[test]
    fn constant_err_reports_degenerate_not_error() {
        let (p, s, degenerate) = correlate(&[1.0, 2.0, 3.0, 4.0], &[0.5; 4]);
        assert!(p.is_none() && s.is_none());
        assert!(degenerate.unwrap().contains("constant"));
    }

    #[test]
    fn underpowered_similarity_report_refuses() {
        // A 3-model matrix yields only 3 pairs, below the floor of 8.
        let names: Vec<String> = (0..3).map(|i| format!("m{i}")).collect();
        let sm = SimilarityMatrix {
            model_names: names.clone(),
            values: vec![vec![1.0; 3]; 3],
            raw_transfer: vec![vec![1.0; 3]; 3],
            pair_counts: vec![vec![10; 3]; 3],
            exclusions: vec![],
            config: crate::sat::SatConfig::default(),
            subsample: vec![0, 1],
            eval_name: "t".into(),
            eval_provenance: "t".into(),
        };
        let n = 4;
        let tables: Vec<Vec<f64>> =
            (0..3).map(|_| vec![1.0, 0.0].repeat(n)).collect();
        let cache = hand_cache(tables, n);
        let err = similarity_vs_ensemble(&sm, &cache).unwrap_err();
        assert!(err.to_string().contains("underpowered"), "{err}");
    }
}
