//! Gradient-boosted regression trees and permutation importance.
//!
//! The regressor stacks depth-limited trees fit to squared-error residuals
//! with shrinkage. Split search is exhaustive — every feature, every midpoint
//! between consecutive distinct values — with ties broken toward the lowest
//! feature index and then the lowest threshold, so fitting is deterministic.
//! Permutation importance reports the mean drop in R² when one feature column
//! is reshuffled, averaged over seeded repeats.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Minimum rows the regression is willing to fit; below this the importance
/// analysis would be noise.
pub const MIN_GBM_ROWS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GbmConfig {
    pub stages: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            stages: 500,
            max_depth: 12,
            min_samples_split: 4,
            min_samples_leaf: 1,
            learning_rate: 0.02,
            seed: 0,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.max_depth == 0 {
            return Err(Error::Config("gbm stages and max-depth must be positive".into()));
        }
        if self.min_samples_split < 2 || self.min_samples_leaf == 0 {
            return Err(Error::Config(
                "gbm min-samples-split must be ≥ 2 and min-samples-leaf ≥ 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "gbm learning rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Node::Leaf { value } => *value,
            Node::Split { feature, threshold, left, right } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    fn mark_used(&self, used: &mut [bool]) {
        if let Node::Split { feature, left, right, .. } = self {
            used[*feature] = true;
            left.mark_used(used);
            right.mark_used(used);
        }
    }
}

/// A fitted gradient-boosting regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmRegressor {
    base: f64,
    trees: Vec<Node>,
    n_features: usize,
    config: GbmConfig,
    train_r2: f64,
}

impl GbmRegressor {
    pub fn predict_one(&self, row: &[f64]) -> f64 {
        let mut v = self.base;
        for t in &self.trees {
            v += self.config.learning_rate * t.predict(row);
        }
        v
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }

    /// R² on the training rows, reported at fit time.
    pub fn train_r2(&self) -> f64 {
        self.train_r2
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn config(&self) -> &GbmConfig {
        &self.config
    }

    /// Which features appear in at least one split of any tree.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.n_features];
        for t in &self.trees {
            t.mark_used(&mut used);
        }
        used
    }
}

/// Coefficient of determination. A constant target is perfectly explained
/// only by an exact constant prediction: `sst == 0` scores 1 when the
/// residuals are zero too, else 0.
pub fn r_squared(target: &[f64], prediction: &[f64]) -> f64 {
    assert_eq!(target.len(), prediction.len(), "r² over mismatched lengths");
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let sst: f64 = target.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ssr: f64 = target.iter().zip(prediction).map(|(y, p)| (y - p) * (y - p)).sum();
    if sst == 0.0 {
        return if ssr == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ssr / sst
}

struct TreeFitter<'a> {
    x: &'a [Vec<f64>],
    max_depth: usize,
    min_split: usize,
    min_leaf: usize,
}

impl TreeFitter<'_> {
    fn leaf(&self, target: &[f64], idx: &[usize]) -> Node {
        let mean = idx.iter().map(|&i| target[i]).sum::<f64>() / idx.len() as f64;
        Node::Leaf { value: mean }
    }

    fn build(&self, target: &[f64], idx: &[usize], depth: usize) -> Node {
        if depth >= self.max_depth || idx.len() < self.min_split {
            return self.leaf(target, idx);
        }
        match self.best_split(target, idx) {
            None => self.leaf(target, idx),
            Some((feature, threshold)) => {
                let (mut left, mut right) = (Vec::new(), Vec::new());
                for &i in idx {
                    if self.x[i][feature] <= threshold {
                        left.push(i);
                    } else {
                        right.push(i);
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(self.build(target, &left, depth + 1)),
                    right: Box::new(self.build(target, &right, depth + 1)),
                }
            }
        }
    }

    /// Exhaustive best split by squared-error gain. Candidates are midpoints
    /// between consecutive distinct feature values; first strictly better
    /// candidate wins, so ties resolve to the lowest (feature, threshold).
    fn best_split(&self, target: &[f64], idx: &[usize]) -> Option<(usize, f64)> {
        let n_features = self.x[0].len();
        let total_sum: f64 = idx.iter().map(|&i| target[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| target[i] * target[i]).sum();
        let parent_sse = total_sq - total_sum * total_sum / idx.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)

        for f in 0..n_features {
            // Sort members by this feature value (stable on row index).
            let mut order: Vec<usize> = idx.to_vec();
            order.sort_by(|&a, &b| {
                self.x[a][f].partial_cmp(&self.x[b][f]).unwrap().then(a.cmp(&b))
            });
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for (pos, &i) in order.iter().enumerate().take(order.len() - 1) {
                let y = target[i];
                left_sum += y;
                left_sq += y * y;
                let (a, b) = (self.x[i][f], self.x[order[pos + 1]][f]);
                if a == b {
                    continue; // no boundary between equal values
                }
                let n_left = pos + 1;
                let n_right = order.len() - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / n_left as f64)
                    + (right_sq - right_sum * right_sum / n_right as f64);
                let gain = parent_sse - sse;
                let threshold = 0.5 * (a + b);
                let better = match best {
                    None => gain > 1e-12,
                    Some((g, bf, bt)) => {
                        gain > g || (gain == g && (f, threshold) < (bf, bt))
                    }
                };
                if better {
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Fits the boosted regressor: base prediction = target mean, then `stages`
/// trees on the running residuals, each scaled by the learning rate.
/// A constant target is warned about and yields the zero-tree model.
pub fn fit_gbm(x: &[Vec<f64>], y: &[f64], cfg: &GbmConfig) -> Result<GbmRegressor> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::Config(format!("{} rows vs {} targets", x.len(), y.len())));
    }
    if x.len() < MIN_GBM_ROWS {
        return Err(Error::Config(format!(
            "regression needs at least {MIN_GBM_ROWS} rows, got {}",
            x.len()
        )));
    }
    let n_features = x[0].len();
    if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
        return Err(Error::Config("feature rows must be nonempty and rectangular".into()));
    }
    if x.iter().flatten().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Config("features and targets must be finite".into()));
    }

    let base = y.iter().sum::<f64>() / y.len() as f64;
    let mut trees = Vec::new();
    if y.iter().all(|&v| v == y[0]) {
        log::warn!("gbm target is constant ({base}); fitting the zero-tree model");
    } else {
        let fitter = TreeFitter {
            x,
            max_depth: cfg.max_depth,
            min_split: cfg.min_samples_split,
            min_leaf: cfg.min_samples_leaf,
        };
        let idx: Vec<usize> = (0..x.len()).collect();
        let mut residual: Vec<f64> = y.iter().map(|v| v - base).collect();
        for _ in 0..cfg.stages {
            if residual.iter().all(|&r| r == 0.0) {
                break; // perfect fit; further trees would be zero
            }
            let tree = fitter.build(&residual, &idx, 0);
            for (r, row) in residual.iter_mut().zip(x) {
                *r -= cfg.learning_rate * tree.predict(row);
            }
            trees.push(tree);
        }
    }

    let mut model = GbmRegressor {
        base,
        trees,
        n_features,
        config: cfg.clone(),
        train_r2: 0.0,
    };
    model.train_r2 = r_squared(y, &model.predict(x));
    Ok(model)
}

/// Mean drop in R² over `repeats` seeded reshuffles of each feature column.
///
/// `importance[i] = mean_r (baseline R² − R² with column i shuffled)`.
/// Each (feature, repeat) pair draws an independent named stream, so the
/// result is deterministic and independent of thread count.
pub fn permutation_importance(
    model: &GbmRegressor,
    x: &[Vec<f64>],
    y: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if repeats == 0 {
        return Err(Error::Config("permutation importance needs at least one repeat".into()));
    }
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Config(format!(
            "importance rows ({}) and targets ({}) must match and be nonempty",
            x.len(),
            y.len()
        )));
    }
    if x.iter().any(|r| r.len() != model.n_features) {
        return Err(Error::Config(format!(
            "importance rows must have {} features",
            model.n_features
        )));
    }
    let baseline = r_squared(y, &model.predict(x));
    let scores: Vec<f64> = (0..model.n_features)
        .into_par_iter()
        .map(|f| {
            let mut drop_sum = 0.0;
            for r in 0..repeats {
                let mut rng = stream(seed, "importance/perm", (f * repeats + r) as u64);
                let mut column: Vec<f64> = x.iter().map(|row| row[f]).collect();
                column.shuffle(&mut rng);
                let shuffled: Vec<Vec<f64>> = x
                    .iter()
                    .zip(&column)
                    .map(|(row, &v)| {
                        let mut row = row.clone();
                        row[f] = v;
                        row
                    })
                    .collect();
                drop_sum += baseline - r_squared(y, &model.predict(&shuffled));
            }
            drop_sum / repeats as f64
        })
        .collect();
    Ok(scores)
}
