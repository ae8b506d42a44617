//! Spectral clustering of the similarity graph.
//!
//! The similarity matrix becomes a nonnegative adjacency (pre-log percentage
//! scale by default), the normalized affinity `D^{-1/2} A D^{-1/2}` is
//! eigendecomposed, the eigenvectors of the K largest eigenvalues form an
//! N×K embedding whose rows are unit-normalized, and K-means++ with restarts
//! partitions the rows — keeping the best objective across restarts.

pub mod eigen;
pub mod kmeans;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sat::SimilarityMatrix;

pub const CLUSTER_FORMAT: &str = "archsim-cluster/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyMode {
    /// Pre-log transfer percentages (nonnegative by construction).
    Percent,
    /// ln-scale scores shifted up by −ln ε_s so the floor maps to zero.
    ShiftedLog,
}

/// A node dropped before clustering, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedNode {
    pub name: String,
    pub reason: String,
}

/// Builds the clustering adjacency from a similarity matrix: models touched
/// by exclusions are dropped (most-excluded first) until no missing entries
/// remain, the requested scale is applied, and the diagonal is zeroed.
/// Returns the kept names, the adjacency, and the drop report.
pub fn adjacency_from_sat(
    sm: &SimilarityMatrix,
    mode: AdjacencyMode,
) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<DroppedNode>)> {
    let n = sm.len();
    let mut keep: Vec<usize> = (0..n).collect();
    let mut dropped = Vec::new();
    loop {
        let missing: Vec<usize> = keep
            .iter()
            .map(|&i| keep.iter().filter(|&&j| sm.values[i][j].is_nan()).count())
            .collect();
        let Some((pos, &worst)) = missing.iter().enumerate().max_by(
            // Highest exclusion count; earliest model on ties.
            |(i, a), (j, b)| a.cmp(b).then(j.cmp(i)),
        ) else {
            break;
        };
        if worst == 0 {
            break;
        }
        let node = keep.remove(pos);
        dropped.push(DroppedNode {
            name: sm.model_names[node].clone(),
            reason: format!("{worst} incomparable pairings"),
        });
    }
    if keep.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} comparable models remain; clustering needs at least 2",
            keep.len()
        )));
    }

    let mut adjacency = vec![vec![0.0f64; keep.len()]; keep.len()];
    for (r, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            if r == c {
                continue;
            }
            let v = match mode {
                AdjacencyMode::Percent => sm.raw_transfer[i][j],
                AdjacencyMode::ShiftedLog => sm.values[i][j] - sm.config.epsilon_floor.ln(),
            };
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Format(format!(
                    "adjacency entry for ({}, {}) is {v}; similarity matrix violates its invariants",
                    sm.model_names[i], sm.model_names[j]
                )));
            }
            adjacency[r][c] = v;
        }
    }
    let names = keep.iter().map(|&i| sm.model_names[i].clone()).collect();
    Ok((names, adjacency, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    pub adjacency: AdjacencyMode,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { k: 10, restarts: 100, seed: 0, adjacency: AdjacencyMode::Percent }
    }
}

/// Result of spectral clustering: one cluster label per kept model plus the
/// spectral embedding the labels were computed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub format: String,
    pub model_names: Vec<String>,
    /// Cluster index per model, in `[0, k)`.
    pub labels: Vec<usize>,
    /// N×K spectral features; rows unit-normalized.
    pub embedding: Vec<Vec<f64>>,
    pub kmeans_objective: f64,
    pub config: ClusterConfig,
    /// Models dropped before clustering (exclusions, isolated nodes).
    pub dropped: Vec<DroppedNode>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.model_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_names.is_empty()
    }

    /// Members of each cluster, by index.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.config.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<ClusterAssignment> {
        let doc: ClusterAssignment = serde_json::from_slice(&std::fs::read(path)?)?;
        if doc.format != CLUSTER_FORMAT {
            return Err(Error::Format(format!(
                "expected format {CLUSTER_FORMAT}, found {}",
                doc.format
            )));
        }
        if doc.labels.len() != doc.model_names.len() || doc.embedding.len() != doc.model_names.len() {
            return Err(Error::Format("cluster assignment arrays disagree in length".into()));
        }
        if doc.labels.iter().any(|&l| l >= doc.config.k) {
            return Err(Error::Format("cluster label out of range".into()));
        }
        Ok(doc)
    }
}

/// Spectral clustering of a nonnegative symmetric adjacency with a zero
/// diagonal. Zero-degree nodes are dropped (reported); the remaining graph
/// is clustered as described in the module docs.
pub fn spectral_cluster(
    names: &[String],
    adjacency: &[Vec<f64>],
    cfg: &ClusterConfig,
) -> Result<ClusterAssignment> {
    let n = names.len();
    if adjacency.len() != n || adjacency.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("adjacency is not {n}x{n}")));
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("clustering needs at least one k-means restart".into()));
    }
    for i in 0..n {
        for j in 0..n {
            let v = adjacency[i][j];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("adjacency[{i}][{j}] = {v} must be finite and ≥ 0")));
            }
            if (v - adjacency[j][i]).abs() > 1e-9 {
                return Err(Error::Config(format!("adjacency[{i}][{j}] != adjacency[{j}][{i}]")));
            }
        }
        if adjacency[i][i] != 0.0 {
            return Err(Error::Config(format!("adjacency diagonal [{i}] must be zero")));
        }
    }

    // Drop isolated nodes.
    let degrees: Vec<f64> = adjacency.iter().map(|row| row.iter().sum()).collect();
    let keep: Vec<usize> = (0..n).filter(|&i| degrees[i] > 0.0).collect();
    let dropped: Vec<DroppedNode> = (0..n)
        .filter(|&i| degrees[i] == 0.0)
        .map(|i| DroppedNode { name: names[i].clone(), reason: "isolated node (zero degree)".into() })
        .collect();
    let m = keep.len();
    if cfg.k == 0 || cfg.k > m {
        return Err(Error::Config(format!("k={} outside [1, {m}]", cfg.k)));
    }

    // Normalized affinity D^{-1/2} A D^{-1/2}.
    let inv_sqrt: Vec<f64> = keep.iter().map(|&i| 1.0 / degrees[i].sqrt()).collect();
    let mut affinity = vec![vec![0.0f64; m]; m];
    for r in 0..m {
        for c in 0..m {
            affinity[r][c] = adjacency[keep[r]][keep[c]] * inv_sqrt[r] * inv_sqrt[c];
        }
    }

    let (_, vectors) = eigen::symmetric_eigen(&affinity)?;
    // Embedding: rows are models, columns the K leading eigenvectors.
    let mut embedding: Vec<Vec<f64>> = (0..m)
        .map(|row| (0..cfg.k).map(|k| vectors[k][row]).collect::<Vec<f64>>())
        .collect();
    for row in &mut embedding {
        let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
    }

    let km = kmeans::kmeans(&embedding, cfg.k, cfg.restarts, cfg.seed)?;
    Ok(ClusterAssignment {
        format: CLUSTER_FORMAT.to_string(),
        model_names: keep.iter().map(|&i| names[i].clone()).collect(),
        labels: km.labels,
        embedding,
        kmeans_objective: km.objective,
        config: cfg.clone(),
        dropped,
    })
}

/// End-to-end: similarity matrix → adjacency → spectral clustering, with
/// exclusion-dropped and isolated nodes merged into one report.
pub fn spectral_cluster_sat(sm: &SimilarityMatrix, cfg: &ClusterConfig) -> Result<ClusterAssignment> {
    let (names, adjacency, dropped) = adjacency_from_sat(sm, cfg.adjacency)?;
    let mut assignment = spectral_cluster(&names, &adjacency, cfg)?;
    let mut all_dropped = dropped;
    all_dropped.extend(assignment.dropped.clone());
    assignment.dropped = all_dropped;
    Ok(assignment)
}

/// Pairwise Euclidean distances of embedding rows, with rows/columns sorted
/// by cluster index (original order within a cluster). Returns the sorted
/// names and the distance matrix.
pub fn spectral_distance_map(assignment: &ClusterAssignment) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut order: Vec<usize> = (0..assignment.len()).collect();
    order.sort_by_key(|&i| (assignment.labels[i], i));
    let names = order.iter().map(|&i| assignment.model_names[i].clone()).collect();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let matrix = order
        .iter()
        .map(|&i| {
            order.iter().map(|&j| dist(&assignment.embedding[i], &assignment.embedding[j])).collect()
        })
        .collect();
    (names, matrix)
}

/// Purity of a clustering against ground-truth tags: the fraction of
/// members that belong to their cluster's majority tag.
pub fn purity(labels: &[usize], tags: &[&str]) -> Result<f64> {
    if labels.len() != tags.len() || labels.is_empty() {
        return Err(Error::Config(format!(
            "purity needs matching nonempty labels ({}) and tags ({})",
            labels.len(),
            tags.len()
        )));
    }
    let k = labels.iter().max().unwrap() + 1;
    let mut majority_sum = 0usize;
    for c in 0..k {
        let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
        for (l, t) in labels.iter().zip(tags) {
            if *l == c {
                *counts.entry(t).or_default() += 1;
            }
        }
        majority_sum += counts.values().copied().max().unwrap_or(0);
    }
    Ok(majority_sum as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackConfig;
    use crate::sat::{Exclusion, SatConfig};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    /// Two planted blocks: strong within, weak across.
    fn two_block_adjacency(block: usize) -> Vec<Vec<f64>> {
        let n = 2 * block;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                a[i][j] = if (i < block) == (j < block) { 90.0 } else { 5.0 };
            }
        }
        a
    }

    #[test]
    fn planted_blocks_are_recovered() {
        let a = two_block_adjacency(4);
        let cfg = ClusterConfig { k: 2, restarts: 10, seed: 3, ..ClusterConfig::default() };
        let got = spectral_cluster(&names(8), &a, &cfg).unwrap();
        assert_eq!(got.labels[0..4].iter().collect::<std::collections::BTreeSet<_>>().len(), 1);
        assert_eq!(got.labels[4..8].iter().collect::<std::collections::BTreeSet<_>>().len(), 1);
        assert_ne!(got.labels[0], got.labels[7]);
        assert!(got.dropped.is_empty());
        // Embedding rows are unit norm.
        for row in &got.embedding {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_adjacency_by_four_changes_nothing() {
        let a = two_block_adjacency(3);
        let scaled: Vec<Vec<f64>> =
            a.iter().map(|r| r.iter().map(|&v| 4.0 * v).collect()).collect();
        let cfg = ClusterConfig { k: 2, restarts: 5, seed: 1, ..ClusterConfig::default() };
        let base = spectral_cluster(&names(6), &a, &cfg).unwrap();
        let quad = spectral_cluster(&names(6), &scaled, &cfg).unwrap();
        // Scaling by a power of two keeps every f64 step exact, so the whole
        // assignment (embedding included) is bit-identical.
        assert_eq!(base.embedding, quad.embedding);
        assert_eq!(base.labels, quad.labels);
    }

    #[test]
    fn permuting_inputs_permutes_the_partition() {
        let a = two_block_adjacency(3);
        let n = 6;
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| a[perm[i]][perm[j]]).collect()).collect();
        let perm_names: Vec<String> = perm.iter().map(|&i| format!("m{i}")).collect();

        let cfg = ClusterConfig { k: 2, restarts: 20, seed: 5, ..ClusterConfig::default() };
        let base = spectral_cluster(&names(n), &a, &cfg).unwrap();
        let shuffled = spectral_cluster(&perm_names, &permuted, &cfg).unwrap();

        // Same partition up to label renaming: co-assignment must agree.
        let label_of = |asg: &ClusterAssignment, name: &str| {
            asg.labels[asg.model_names.iter().position(|n| n == name).unwrap()]
        };
        for i in 0..n {
            for j in 0..n {
                let (a_i, a_j) = (format!("m{i}"), format!("m{j}"));
                assert_eq!(
                    label_of(&base, &a_i) == label_of(&base, &a_j),
                    label_of(&shuffled, &a_i) == label_of(&shuffled, &a_j),
                    "co-assignment of {a_i},{a_j} differs after permutation"
                );
            }
        }
    }

    #[test]
    fn isolated_nodes_are_dropped_and_reported() {
        let mut a = two_block_adjacency(3);
        for j in 0..6 {
            a[2][j] = 0.0;
            a[j][2] = 0.0;
        }
        let cfg = ClusterConfig { k: 2, restarts: 5, seed: 0, ..ClusterConfig::default() };
        let got = spectral_cluster(&names(6), &a, &cfg).unwrap();
        assert_eq!(got.len(), 5);
        assert_eq!(got.dropped.len(), 1);
        assert_eq!(got.dropped[0].name, "m2");
        assert!(!got.model_names.contains(&"m2".to_string()));
    }

    #[test]
    fn adjacency_validation_rejects_bad_matrices() {
        let cfg = ClusterConfig { k: 2, restarts: 3, ..ClusterConfig::default() };
        let neg = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        assert!(spectral_cluster(&names(2), &neg, &cfg).is_err());
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(spectral_cluster(&names(2), &asym, &cfg).is_err());
        let diag = vec![vec![1.0, 1.0], vec![1.0, 0.0]];
        assert!(spectral_cluster(&names(2), &diag, &cfg).is_err());
    }

    fn matrix_with_exclusion() -> SimilarityMatrix {
        // 3 models; pair (0,2) is excluded.
        let nan = f64::NAN;
        SimilarityMatrix {
            model_names: names(3),
            values: vec![
                vec![4.0, 3.0, nan],
                vec![3.0, 4.0, 2.0],
                vec![nan, 2.0, 4.0],
            ],
            raw_transfer: vec![
                vec![54.6, 20.1, nan],
                vec![20.1, 54.6, 7.4],
                vec![nan, 7.4, 54.6],
            ],
            pair_counts: vec![vec![50, 40, 0], vec![40, 50, 30], vec![0, 30, 50]],
            exclusions: vec![Exclusion {
                a: "m0".into(),
                b: "m2".into(),
                reason: "no shared correctly-classified inputs".into(),
            }],
            config: SatConfig { attack: AttackConfig::default(), ..SatConfig::default() },
            subsample: (0..50).collect(),
            eval_name: "test".into(),
            eval_provenance: "test".into(),
        }
    }

    #[test]
    fn exclusions_drop_the_most_affected_node() {
        let sm = matrix_with_exclusion();
        let (kept, adjacency, dropped) = adjacency_from_sat(&sm, AdjacencyMode::Percent).unwrap();
        // m0 and m2 are tied at one exclusion each; the earliest drops.
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].name, "m0");
        assert_eq!(kept, vec!["m1".to_string(), "m2".to_string()]);
        assert_eq!(adjacency[0][0], 0.0, "diagonal zeroed");
        assert_eq!(adjacency[0][1], 7.4);
    }

    #[test]
    fn shifted_log_adjacency_is_nonnegative_and_floor_maps_to_zero() {
        let mut sm = matrix_with_exclusion();
        sm.values = vec![
            vec![4.0, 0.01_f64.ln(), 1.0],
            vec![0.01_f64.ln(), 4.0, 2.0],
            vec![1.0, 2.0, 4.0],
        ];
        sm.raw_transfer = vec![vec![54.6; 3]; 3];
        sm.exclusions.clear();
        let (_, adjacency, dropped) = adjacency_from_sat(&sm, AdjacencyMode::ShiftedLog).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(adjacency[0][1], 0.0, "floor value shifts to exactly zero");
        assert!((adjacency[0][2] - (1.0 - 0.01_f64.ln())).abs() < 1e-15);
        assert!(adjacency.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn distance_map_sorts_by_cluster_and_measures_euclidean() {
        let assignment = ClusterAssignment {
            format: CLUSTER_FORMAT.into(),
            model_names: names(4),
            labels: vec![1, 0, 1, 0],
            embedding: vec![
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
            ],
            kmeans_objective: 0.0,
            config: ClusterConfig { k: 2, ..ClusterConfig::default() },
            dropped: vec![],
        };
        let (sorted, d) = spectral_distance_map(&assignment);
        assert_eq!(sorted, vec!["m1", "m3", "m0", "m2"]);
        // Identical one-hot rows within a cluster, orthonormal across.
        assert_eq!(d[0][1], 0.0);
        assert_eq!(d[2][3], 0.0);
        assert!((d[0][2] - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn purity_counts_majority_tags() {
        let labels = vec![0, 0, 0, 1, 1];
        let tags = vec!["cnn", "cnn", "mlp", "mlp", "mlp"];
        // Cluster 0 majority cnn (2 of 3), cluster 1 majority mlp (2 of 2).
        let p = purity(&labels, &tags).unwrap();
        assert!((p - 4.0 / 5.0).abs() < 1e-15);
        assert_eq!(purity(&[0, 0], &["a", "a"]).unwrap(), 1.0);
        assert!(purity(&[0], &[]).is_err());
    }

    #[test]
    fn assignment_round_trips_through_disk() {
        let a = two_block_adjacency(3);
        let cfg = ClusterConfig { k: 2, restarts: 5, seed: 2, ..ClusterConfig::default() };
        let got = spectral_cluster(&names(6), &a, &cfg).unwrap();
        let path = std::env::temp_dir().join(format!("archsim-cluster-{}.json", std::process::id()));
        got.save(&path).unwrap();
        let back = ClusterAssignment::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(back, got);
    }
}
