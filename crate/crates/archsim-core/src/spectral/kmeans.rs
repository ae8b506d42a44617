//! K-means with K-means++ seeding and multi-restart selection.
//!
//! Deterministic: every restart draws from its own named stream, ties in
//! assignment break to the lowest center index, and the best restart is the
//! lowest objective with the restart index as tiebreaker. Restarts run in
//! parallel; the winner does not depend on scheduling.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::stream;

const MAX_LLOYD_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Sum of squared distances of points to their centers.
    pub objective: f64,
}

/// Runs `restarts` independent K-means++ fits and keeps the best objective.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KmeansResult> {
    if points.is_empty() {
        return Err(Error::EmptyBatch("k-means on no points".into()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Config("k-means points must share a nonzero dimension".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!(
            "k={k} outside [1, {}] for {} points",
            points.len(),
            points.len()
        )));
    }
    if restarts == 0 {
        return Err(Error::Config("k-means needs at least one restart".into()));
    }

    let runs: Vec<KmeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| single_run(points, k, stream(seed, "kmeans/restart", r as u64)))
        .collect();
    Ok(runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.objective.partial_cmp(&b.objective).unwrap().then(i.cmp(j)))
        .map(|(_, run)| run)
        .expect("restarts >= 1"))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = dist2(point, &centers[0]);
    for (c, center) in centers.iter().enumerate().skip(1) {
        let d = dist2(point, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn single_run(points: &[Vec<f64>], k: usize, mut rng: impl Rng) -> KmeansResult {
    let n = points.len();
    let dim = points[0].len();

    // K-means++ seeding: first center uniform, then D²-weighted.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen_range(0.0..1.0) * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass is zero (duplicate points); any point works.
            rng.gen_range(0..n)
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, centers.last().unwrap()));
        }
    }

    // Lloyd iterations to an assignment fixpoint.
    let mut labels = vec![0usize; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, &x) in sums[labels[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centers[c] = std::mem::take(&mut sums[c]);
            } else {
                // Empty cluster: reseed at the point farthest from its
                // current center (lowest index on ties).
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, dist2(p, &centers[labels[i]])))
                    .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
                    .map(|(i, _)| i)
                    .expect("nonempty points");
                centers[c] = points[far].clone();
                labels[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let objective = points.iter().enumerate().map(|(i, p)| dist2(p, &centers[labels[i]])).sum();
    KmeansResult { labels, centers, objective }
}
