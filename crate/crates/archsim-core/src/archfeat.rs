//! Categorical architecture descriptions and the features derived from them.
//!
//! Every model carries a record of 13 architectural components (base
//! architecture, stem, normalization, ...). Pairwise records are compared by
//! componentwise Hamming difference, which feeds the importance regression,
//! and per-cluster TF-IDF scores over `component=value` tokens surface what
//! distinguishes a cluster of models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Component names, in canonical order.
pub const COMPONENTS: [&str; 13] = [
    "base-architecture",
    "stem-layer",
    "input-resolution",
    "normalization",
    "hierarchical",
    "activation",
    "pooling-at-stem",
    "2d-self-attention",
    "channel-wise-attention",
    "depthwise-conv",
    "group-conv",
    "final-pooling",
    "cw-attention-location",
];

/// One categorical value per architectural component. Values are free-form
/// strings from an extensible vocabulary; equality is exact string equality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ArchFeatureRecord {
    pub base_architecture: String,
    pub stem_layer: String,
    pub input_resolution: String,
    pub normalization: String,
    pub hierarchical: String,
    pub activation: String,
    pub pooling_at_stem: String,
    #[serde(rename = "2d-self-attention")]
    pub self_attention_2d: String,
    pub channel_wise_attention: String,
    pub depthwise_conv: String,
    pub group_conv: String,
    pub final_pooling: String,
    pub cw_attention_location: String,
}

impl ArchFeatureRecord {
    /// Component values in canonical order.
    pub fn values(&self) -> [&str; 13] {
        [
            &self.base_architecture,
            &self.stem_layer,
            &self.input_resolution,
            &self.normalization,
            &self.hierarchical,
            &self.activation,
            &self.pooling_at_stem,
            &self.self_attention_2d,
            &self.channel_wise_attention,
            &self.depthwise_conv,
            &self.group_conv,
            &self.final_pooling,
            &self.cw_attention_location,
        ]
    }

    /// `component=value` tokens in canonical order.
    pub fn tokens(&self) -> Vec<String> {
        COMPONENTS
            .iter()
            .zip(self.values())
            .map(|(c, v)| format!("{c}={v}"))
            .collect()
    }

    /// Neutral record for models where the analysis is irrelevant (test
    /// fixtures, planar toys).
    pub fn placeholder() -> Self {
        ArchFeatureRecord {
            base_architecture: "mlp".into(),
            stem_layer: "none".into(),
            input_resolution: "na".into(),
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
        }
    }
}

/// Binary disagreement indicator per component: 1.0 where the records differ.
pub fn hamming_diff(a: &ArchFeatureRecord, b: &ArchFeatureRecord) -> [f64; 13] {
    let mut out = [0.0; 13];
    for ((o, va), vb) in out.iter_mut().zip(a.values()).zip(b.values()) {
        if va != vb {
            *o = 1.0;
        }
    }
    out
}

/// Builds the pairwise regression design: one row per unordered model pair
/// `(i < j)` with the 13 Hamming indicators as features and the similarity
/// value as target. Pair order matches iteration over the upper triangle.
pub fn pair_rows(
    records: &[ArchFeatureRecord],
    values: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = records.len();
    if values.len() != n || values.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!(
            "similarity matrix does not match {n} feature records"
        )));
    }
    let mut x = Vec::with_capacity(n * (n - 1) / 2);
    let mut y = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let v = values[i][j];
            if !v.is_finite() {
                return Err(Error::Degenerate(format!(
                    "pair ({i}, {j}) has non-finite similarity; drop excluded pairs first"
                )));
            }
            x.push(hamming_diff(&records[i], &records[j]).to_vec());
            y.push(v);
        }
    }
    Ok((x, y))
}

/// Top-`k` distinguishing tokens per cluster.
///
/// Each record is a 13-token document with uniform term frequency `1/13`;
/// `idf = ln(N / df)` over all records; a cluster scores a token by the mean
/// `tf * idf` over its members. Only positive scores qualify; ties break
/// lexicographically.
pub fn tfidf_keywords(
    records: &[ArchFeatureRecord],
    cluster_labels: &[usize],
    top_k: usize,
) -> Result<Vec<Vec<(String, f64)>>> {
    if records.len() != cluster_labels.len() {
        return Err(Error::Config(format!(
            "{} records vs {} cluster labels",
            records.len(),
            cluster_labels.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::EmptyBatch("tf-idf over zero records".into()));
    }
    let n_docs = records.len() as f64;
    let docs: Vec<Vec<String>> = records.iter().map(|r| r.tokens()).collect();

    let mut df: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for doc in &docs {
        for tok in doc {
            *df.entry(tok.as_str()).or_insert(0) += 1;
        }
    }

    let n_clusters = cluster_labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    let tf = 1.0 / COMPONENTS.len() as f64;
    let mut out = Vec::with_capacity(n_clusters);
    for cl in 0..n_clusters {
        let members: Vec<usize> = cluster_labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == cl).then_some(i))
            .collect();
        if members.is_empty() {
            out.push(Vec::new());
            continue;
        }
        let mut scores: std::collections::BTreeMap<&str, f64> = std::collections::BTreeMap::new();
        for &m in &members {
            for tok in &docs[m] {
                let idf = (n_docs / df[tok.as_str()] as f64).ln();
                *scores.entry(tok.as_str()).or_insert(0.0) += tf * idf;
            }
        }
        let inv = 1.0 / members.len() as f64;
        let mut ranked: Vec<(String, f64)> = scores
            .into_iter()
            .map(|(t, s)| (t.to_string(), s * inv))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        out.push(ranked);
    }
    Ok(out)
}
