//! Exactly computable 2-D decision-boundary testbed.
//!
//! Planar models classify points of the plane (a 1×2×1 input). Because the
//! domain is two-dimensional, the true disagreement between two models'
//! decision rules can be measured directly: the fraction of a dense grid
//! where their predictions differ. That oracle anchors a rank benchmark of
//! similarity methods — attack-transfer similarity against two baselines,
//! label-map agreement on random triplet planes and the gap between minimal
//! boundary-flip distances.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archfeat::ArchFeatureRecord;
use crate::error::{Error, Result};
use crate::nn::train::{train, TrainConfig};
use crate::nn::{eval, LayerSpec, Model, ModelSpec};
use crate::rng::stream;
use crate::sat::{sat_matrix, SatConfig};
use crate::stats;
use crate::tensor::Tensor;
use crate::zoo::{Dataset, Split};

/// The four planar model families, chosen for distinct boundary geometry:
/// kinked (relu), smooth (gelu), sigmoid-bump (silu, loosely radial), and
/// exactly piecewise-linear with nonzero slopes everywhere (leaky-relu).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanarFamily {
    MlpRelu,
    MlpGelu,
    RbfIsh,
    PiecewiseLinear,
}

impl PlanarFamily {
    pub const ALL: [PlanarFamily; 4] = [
        PlanarFamily::MlpRelu,
        PlanarFamily::MlpGelu,
        PlanarFamily::RbfIsh,
        PlanarFamily::PiecewiseLinear,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            PlanarFamily::MlpRelu => "mlp-relu",
            PlanarFamily::MlpGelu => "mlp-gelu",
            PlanarFamily::RbfIsh => "rbf-ish",
            PlanarFamily::PiecewiseLinear => "piecewise-linear",
        }
    }
}

/// A trained planar classifier with its family tag.
#[derive(Debug, Clone)]
pub struct PlanarModel {
    pub model: Model,
    pub family: PlanarFamily,
}

/// Spec for one planar model: 1×2×1 input, two classes.
pub fn planar_spec(family: PlanarFamily, name: &str, hidden: usize) -> ModelSpec {
    let (layers, activation) = match family {
        PlanarFamily::MlpRelu => (
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { units: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 2 },
            ],
            "relu",
        ),
        PlanarFamily::MlpGelu => (
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: hidden },
                LayerSpec::Gelu,
                LayerSpec::Dense { units: hidden },
                LayerSpec::Gelu,
                LayerSpec::Dense { units: 2 },
            ],
            "gelu",
        ),
        // The one-hidden-layer bump family gets 8× width (a single layer
        // needs many units to carve a closed boundary) and a batch norm so
        // bump positions train from un-centered coordinates; batch norm is
        // affine at inference, so the geometry class is unchanged.
        PlanarFamily::RbfIsh => (
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 8 * hidden },
                LayerSpec::BatchNorm,
                LayerSpec::Silu,
                LayerSpec::Dense { units: 2 },
            ],
            "silu",
        ),
        // Leaky activations keep every region's gradient alive, so the
        // model is exactly piecewise linear with no dead facets — two
        // hidden layers train far more reliably than one on a ring.
        PlanarFamily::PiecewiseLinear => (
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 2 * hidden },
                LayerSpec::LeakyRelu { negative_slope: 0.1 },
                LayerSpec::Dense { units: 2 * hidden },
                LayerSpec::LeakyRelu { negative_slope: 0.1 },
                LayerSpec::Dense { units: 2 },
            ],
            "leaky-relu",
        ),
    };
    ModelSpec {
        name: name.to_string(),
        input_resolution: [1, 2, 1],
        num_classes: 2,
        layers,
        arch_features: ArchFeatureRecord {
            base_architecture: "planar-mlp".into(),
            activation: activation.into(),
            ..ArchFeatureRecord::placeholder()
        },
    }
}

fn ensure_planar(model: &Model) -> Result<()> {
    if model.input_resolution() != [1, 2, 1] || model.num_classes() != 2 {
        return Err(Error::Config(format!(
            "{} is not planar: needs 1×2×1 input and 2 classes",
            model.name()
        )));
    }
    Ok(())
}

/// Packs 2-D points into the 1×2×1 image tensor planar models expect.
pub fn point_tensor(points: &[[f32; 2]]) -> Tensor {
    let data = points.iter().flat_map(|p| p.iter().copied()).collect();
    Tensor::new(vec![points.len(), 1, 2, 1], data).expect("points always form a valid tensor")
}

/// Ground-truth rule of the planar task: class 1 on a ring around the
/// center of the unit square.
pub fn ring_label(x: f64, y: f64) -> usize {
    let r2 = (x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5);
    usize::from((0.18 * 0.18..=0.36 * 0.36).contains(&r2))
}

/// Uniform points in the unit square labeled by the ring rule.
pub fn ring_dataset(n: usize, seed: u64, split: Split) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyBatch("ring dataset of zero points".into()));
    }
    let split_index = match split {
        Split::Train => 0,
        Split::Eval => 1,
    };
    let mut rng = stream(seed, "planar/ring", split_index);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.gen_range(0.0..1.0);
        let y: f64 = rng.gen_range(0.0..1.0);
        data.push(x as f32);
        data.push(y as f32);
        labels.push(ring_label(x, y));
    }
    Ok(Dataset {
        name: format!("ring-{n}"),
        images: Tensor::new(vec![n, 1, 2, 1], data)?,
        labels,
        num_classes: 2,
        split,
        provenance: format!("ring rule, n={n}, seed={seed}, split={split:?}"),
    })
}

/// Axis-aligned evaluation window in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarDomain {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl PlanarDomain {
    pub const UNIT: PlanarDomain = PlanarDomain { x_lo: 0.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x_lo, self.x_hi, self.y_lo, self.y_hi];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("planar domain must be finite".into()));
        }
        if self.x_hi <= self.x_lo || self.y_hi <= self.y_lo {
            return Err(Error::Degenerate(format!(
                "planar domain has no area: x [{}, {}], y [{}, {}]",
                self.x_lo, self.x_hi, self.y_lo, self.y_hi
            )));
        }
        Ok(())
    }
}

/// Minimum grid resolution per axis for the disagreement oracle.
pub const MIN_ORACLE_GRID: usize = 100;

/// Predictions on the `grid_n × grid_n` lattice of cell centers, row-major
/// from (x_lo, y_lo).
pub fn label_map(model: &Model, domain: &PlanarDomain, grid_n: usize) -> Result<Vec<u8>> {
    ensure_planar(model)?;
    domain.validate()?;
    if grid_n < 2 {
        return Err(Error::Config("label map needs at least a 2×2 grid".into()));
    }
    let dx = (domain.x_hi - domain.x_lo) / grid_n as f64;
    let dy = (domain.y_hi - domain.y_lo) / grid_n as f64;
    let rows: Vec<Result<Vec<u8>>> = (0..grid_n)
        .into_par_iter()
        .map(|j| {
            let y = (domain.y_lo + (j as f64 + 0.5) * dy) as f32;
            let points: Vec<[f32; 2]> = (0..grid_n)
                .map(|i| [(domain.x_lo + (i as f64 + 0.5) * dx) as f32, y])
                .collect();
            let preds = eval::predictions(model, &point_tensor(&points))?;
            Ok(preds.into_iter().map(|p| p as u8).collect())
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(rows.concat())
}

/// Fraction of a dense grid where the two models' predictions differ — the
/// ground-truth boundary-difference measure on a 2-D domain.
pub fn boundary_disagreement_oracle(
    f: &Model,
    g: &Model,
    domain: &PlanarDomain,
    grid_n: usize,
) -> Result<f64> {
    if grid_n < MIN_ORACLE_GRID {
        return Err(Error::Config(format!(
            "oracle needs ≥ {MIN_ORACLE_GRID} grid points per axis, got {grid_n}"
        )));
    }
    let map_f = label_map(f, domain, grid_n)?;
    let map_g = label_map(g, domain, grid_n)?;
    Ok(disagreement(&map_f, &map_g))
}

/// ℓ0 distance between two label maps: fraction of positions that differ.
pub fn disagreement(a: &[u8], b: &[u8]) -> f64 {
    assert_eq!(a.len(), b.len(), "label maps of different grids");
    let diff = a.iter().zip(b).filter(|(x, y)| x != y).count();
    diff as f64 / a.len() as f64
}

/// Outcome of the triplet-plane baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TripletOutcome {
    /// Mean label-agreement fraction over triplet triangles, in [0, 1].
    pub similarity: f64,
    pub triplets: usize,
    /// Collinear draws that were rejected and redrawn.
    pub resampled: usize,
}

const COLLINEAR_RETRIES: usize = 20;
const COLLINEAR_AREA_EPS: f64 = 1e-9;

/// Label-map agreement over triangles spanned by random sample triplets.
///
/// Each triplet's triangle carries a barycentric lattice with `grid_n`
/// subdivisions per edge; both models predict on the lattice and the
/// per-triplet agreement fractions are averaged. Collinear triplets are
/// redrawn up to a bounded number of times.
pub fn triplet_plane_similarity(
    f: &Model,
    g: &Model,
    samples: &[[f32; 2]],
    num_triplets: usize,
    grid_n: usize,
    seed: u64,
) -> Result<TripletOutcome> {
    ensure_planar(f)?;
    ensure_planar(g)?;
    if samples.len() < 3 {
        return Err(Error::Config(format!(
            "triplet baseline needs ≥ 3 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("triplet samples must be finite".into()));
    }
    if num_triplets == 0 || grid_n < 2 {
        return Err(Error::Config("triplet baseline needs ≥ 1 triplet and grid ≥ 2".into()));
    }
    // The plane family is only informative if something distinguishes the
    // predictions; require two classes across the union of both models.
    let tensor = point_tensor(samples);
    let mut classes: Vec<usize> = eval::predictions(f, &tensor)?;
    classes.extend(eval::predictions(g, &tensor)?);
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate(
            "triplet baseline: both models predict a single class on every sample".into(),
        ));
    }

    let draws: Vec<Result<([usize; 3], usize)>> = (0..num_triplets)
        .map(|t| {
            let mut rng = stream(seed, "boundary/triplet", t as u64);
            for attempt in 0..COLLINEAR_RETRIES {
                let mut pool: Vec<usize> = (0..samples.len()).collect();
                let (chosen, _) = pool.partial_shuffle(&mut rng, 3);
                let [a, b, c] = [chosen[0], chosen[1], chosen[2]];
                let (pa, pb, pc) = (samples[a], samples[b], samples[c]);
                let area = ((pb[0] - pa[0]) as f64 * (pc[1] - pa[1]) as f64
                    - (pc[0] - pa[0]) as f64 * (pb[1] - pa[1]) as f64)
                    .abs();
                if area > COLLINEAR_AREA_EPS {
                    return Ok(([a, b, c], attempt));
                }
            }
            Err(Error::Degenerate(format!(
                "triplet draw stayed collinear after {COLLINEAR_RETRIES} retries"
            )))
        })
        .collect();
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
    let resampled = draws.iter().map(|(_, r)| r).sum();

    let agreements: Vec<Result<f64>> = draws
        .par_iter()
        .map(|&([a, b, c], _)| {
            let (pa, pb, pc) = (samples[a], samples[b], samples[c]);
            let mut points = Vec::with_capacity((grid_n + 1) * (grid_n + 2) / 2);
            for i in 0..=grid_n {
                for j in 0..=(grid_n - i) {
                    let la = i as f32 / grid_n as f32;
                    let lb = j as f32 / grid_n as f32;
                    let lc = 1.0 - la - lb;
                    points.push([
                        la * pa[0] + lb * pb[0] + lc * pc[0],
                        la * pa[1] + lb * pb[1] + lc * pc[1],
                    ]);
                }
            }
            let t = point_tensor(&points);
            let pf = eval::predictions(f, &t)?;
            let pg = eval::predictions(g, &t)?;
            let agree = pf.iter().zip(&pg).filter(|(x, y)| x == y).count();
            Ok(agree as f64 / points.len() as f64)
        })
        .collect();
    let agreements = agreements.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(TripletOutcome {
        similarity: agreements.iter().sum::<f64>() / agreements.len() as f64,
        triplets: num_triplets,
        resampled,
    })
}

/// Configuration of the minimal-flip-distance baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MinFlipConfig {
    /// Largest L∞ radius searched; no flip within it skips the sample.
    pub max_radius: f32,
    /// Outward march steps used to bracket the first flip. Closed
    /// boundaries can be crossed and re-crossed along one ray, so the
    /// search must find the first crossing, not probe only the endpoint.
    pub march_steps: usize,
    /// Bisection steps once a flip is bracketed.
    pub halvings: usize,
}

impl Default for MinFlipConfig {
    fn default() -> Self {
        MinFlipConfig { max_radius: 1.0, march_steps: 32, halvings: 30 }
    }
}

/// Outcome of the minimal-flip-distance baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MinFlipOutcome {
    /// Mean |δ_f − δ_g| over usable samples (a dissimilarity).
    pub mean_abs_gap: f64,
    /// Negated gap, so that larger means more similar.
    pub similarity: f64,
    pub used: usize,
    pub skipped: usize,
}

/// Per-sample minimal flip radius along the model's own ascent direction.
/// `None` marks unusable samples: zero gradient (no direction) or no flip
/// within `max_radius`.
fn flip_radii(model: &Model, samples: &[[f32; 2]], cfg: &MinFlipConfig) -> Result<Vec<Option<f64>>> {
    let tensor = point_tensor(samples);
    let preds = eval::predictions(model, &tensor)?;
    let grad = model.input_gradient(&tensor, &preds)?;
    let directions: Vec<[f32; 2]> = grad
        .data()
        .chunks_exact(2)
        .map(|d| {
            [
                if d[0] > 0.0 { 1.0 } else if d[0] < 0.0 { -1.0 } else { 0.0 },
                if d[1] > 0.0 { 1.0 } else if d[1] < 0.0 { -1.0 } else { 0.0 },
            ]
        })
        .collect();

    let at = |radii: &[f64]| -> Vec<[f32; 2]> {
        samples
            .iter()
            .zip(&directions)
            .zip(radii)
            .map(|((p, d), &r)| [p[0] + r as f32 * d[0], p[1] + r as f32 * d[1]])
            .collect()
    };

    // March outward to bracket the FIRST flip; a ray can cross a closed
    // boundary and re-enter the starting class, so probing only the
    // endpoint would miss crossings.
    let has_direction: Vec<bool> = directions.iter().map(|d| d != &[0.0, 0.0]).collect();
    let step = cfg.max_radius as f64 / cfg.march_steps as f64;
    let mut bracketed = vec![false; samples.len()];
    let mut lo = vec![0.0f64; samples.len()];
    let mut hi = vec![0.0f64; samples.len()];
    for k in 1..=cfg.march_steps {
        let r = step * k as f64;
        let preds_r = eval::predictions(model, &point_tensor(&at(&vec![r; samples.len()])))?;
        for i in 0..samples.len() {
            if has_direction[i] && !bracketed[i] && preds_r[i] != preds[i] {
                bracketed[i] = true;
                lo[i] = step * (k - 1) as f64;
                hi[i] = r;
            }
        }
        if bracketed.iter().zip(&has_direction).all(|(&b, &d)| b || !d) {
            break;
        }
    }

    // Shared bisection inside each bracket: lo never flips, hi always does.
    for _ in 0..cfg.halvings {
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let preds_mid = eval::predictions(model, &point_tensor(&at(&mid)))?;
        for i in 0..samples.len() {
            if !bracketed[i] {
                continue;
            }
            if preds_mid[i] != preds[i] {
                hi[i] = mid[i];
            } else {
                lo[i] = mid[i];
            }
        }
    }
    Ok(bracketed
        .iter()
        .zip(&hi)
        .map(|(&b, &h)| if b { Some(h) } else { None })
        .collect())
}

/// Compares two models by how differently far their decision boundaries sit
/// from the same points: dissimilarity = mean |δ_f − δ_g|, each δ found by
/// signed-gradient ray search + bisection on the model's own predictions.
pub fn min_flip_distance(
    f: &Model,
    g: &Model,
    samples: &[[f32; 2]],
    cfg: &MinFlipConfig,
) -> Result<MinFlipOutcome> {
    ensure_planar(f)?;
    ensure_planar(g)?;
    if samples.is_empty() {
        return Err(Error::EmptyBatch("min-flip over zero samples".into()));
    }
    if !(cfg.max_radius > 0.0 && cfg.max_radius.is_finite())
        || cfg.halvings == 0
        || cfg.march_steps == 0
    {
        return Err(Error::Config(
            "min-flip needs a positive radius, ≥ 1 march step and ≥ 1 halving".into(),
        ));
    }
    let rf = flip_radii(f, samples, cfg)?;
    let rg = flip_radii(g, samples, cfg)?;
    let gaps: Vec<f64> = rf
        .iter()
        .zip(&rg)
        .filter_map(|(a, b)| match (a, b) {
            (Some(x), Some(y)) => Some((x - y).abs()),
            _ => None,
        })
        .collect();
    let skipped = samples.len() - gaps.len();
    if gaps.is_empty() {
        return Err(Error::Degenerate(format!(
            "min-flip: all {} samples skipped (no usable flip radius)",
            samples.len()
        )));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    Ok(MinFlipOutcome { mean_abs_gap: mean, similarity: -mean, used: gaps.len(), skipped })
}

/// Configuration of the rank benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchmarkConfig {
    pub domain: PlanarDomain,
    pub oracle_grid: usize,
    pub num_triplets: usize,
    pub triplet_grid: usize,
    pub min_flip: MinFlipConfig,
    pub sat: SatConfig,
    /// Choose the attack budget from the oracle: ε = half the median pair
    /// disagreement (an area fraction that doubles as a typical boundary
    /// gap on the unit square), clamped to [0.02, 0.4].
    pub auto_epsilon: bool,
    /// Fresh evaluation points per seed.
    pub eval_points: usize,
    /// Of those, how many the min-flip baseline uses.
    pub min_flip_points: usize,
    /// Seeds for resampling; the first is the reporting seed.
    pub seeds: Vec<u64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            domain: PlanarDomain::UNIT,
            oracle_grid: 200,
            num_triplets: 20,
            triplet_grid: 30,
            min_flip: MinFlipConfig::default(),
            sat: SatConfig::default(),
            auto_epsilon: true,
            eval_points: 400,
            min_flip_points: 60,
            seeds: vec![0, 1, 2],
        }
    }
}

/// One similarity method's agreement with the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MethodRank {
    pub method: String,
    /// Mean Spearman ρ against the oracle across seeds (NaN when degenerate).
    pub rho: f64,
    /// Sample std of ρ across seeds (0 when fewer than 2 seeds).
    pub rho_std: f64,
    /// Per-pair values at the first seed.
    pub values: Vec<f64>,
}

/// Rank benchmark report: per-pair oracle plus each method's correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchmarkReport {
    pub pair_names: Vec<(String, String)>,
    pub oracle: Vec<f64>,
    pub methods: Vec<MethodRank>,
    pub epsilon_used: f64,
    pub seeds: Vec<u64>,
    /// Set when ranking is impossible (e.g. the oracle ties everywhere).
    pub degenerate: Option<String>,
}

impl BenchmarkReport {
    pub fn method(&self, name: &str) -> Option<&MethodRank> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model-a,model-b,oracle");
        for m in &self.methods {
            out.push(',');
            out.push_str(&m.method);
        }
        out.push('\n');
        for (i, (a, b)) in self.pair_names.iter().enumerate() {
            out.push_str(&format!("{a},{b},{:.6}", self.oracle[i]));
            for m in &self.methods {
                out.push_str(&format!(",{:.6}", m.values[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Minimum planar models for the benchmark (28 pairs).
pub const MIN_BENCHMARK_MODELS: usize = 8;

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Benchmarks how well each similarity method ranks model pairs against the
/// boundary-disagreement oracle. For every seed, fresh ring-labeled points
/// are drawn and each method re-scored; the report carries mean and std of
/// Spearman ρ per method, with per-pair values at the first seed.
pub fn rank_benchmark(models: &[PlanarModel], cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if models.len() < MIN_BENCHMARK_MODELS {
        return Err(Error::Config(format!(
            "rank benchmark needs ≥ {MIN_BENCHMARK_MODELS} planar models, got {}",
            models.len()
        )));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("rank benchmark needs at least one seed".into()));
    }
    for pm in models {
        ensure_planar(&pm.model)?;
    }
    if cfg.min_flip_points == 0 || cfg.min_flip_points > cfg.eval_points {
        return Err(Error::Config(
            "min-flip points must be in [1, eval-points]".into(),
        ));
    }

    let n = models.len();
    let mut pair_names = Vec::new();
    let mut pair_index = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pair_names.push((models[i].model.name().to_string(), models[j].model.name().to_string()));
            pair_index.push((i, j));
        }
    }

    // Oracle, once: it has no seed. One label map per model, reused across
    // its pairs.
    if cfg.oracle_grid < MIN_ORACLE_GRID {
        return Err(Error::Config(format!(
            "oracle needs ≥ {MIN_ORACLE_GRID} grid points per axis, got {}",
            cfg.oracle_grid
        )));
    }
    let maps: Vec<Vec<u8>> = models
        .par_iter()
        .map(|pm| label_map(&pm.model, &cfg.domain, cfg.oracle_grid))
        .collect::<Result<Vec<_>>>()?;
    let oracle: Vec<f64> =
        pair_index.iter().map(|&(i, j)| disagreement(&maps[i], &maps[j])).collect();

    // Attack budget from the oracle when requested.
    let epsilon_used = if cfg.auto_epsilon {
        let mut sorted = oracle.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        let eps = (0.5 * median).clamp(0.02, 0.4);
        log::info!(
            "planar attack budget from oracle: median disagreement {median:.4} → ε = {eps:.4}"
        );
        eps
    } else {
        cfg.sat.attack.epsilon as f64
    };

    let mut sat_rhos = Vec::new();
    let mut triplet_rhos = Vec::new();
    let mut minflip_rhos = Vec::new();
    let mut first_values: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut degenerate: Option<String> = None;

    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let eval_set = ring_dataset(cfg.eval_points, seed.wrapping_add(101), Split::Eval)?;
        let points: Vec<[f32; 2]> = eval_set
            .images
            .data()
            .chunks_exact(2)
            .map(|p| [p[0], p[1]])
            .collect();

        let mut sat_cfg = cfg.sat.clone();
        // The eval set is already the per-seed sample; never subsample again.
        sat_cfg.eval_fraction = 1.0;
        sat_cfg.seed = seed;
        sat_cfg.attack.seed = seed;
        sat_cfg.attack.epsilon = epsilon_used as f32;
        sat_cfg.attack.step_size = (epsilon_used / 4.0) as f32;
        let model_refs: Vec<&Model> = models.iter().map(|pm| &pm.model).collect();
        let sm = sat_matrix(&model_refs, &eval_set, &sat_cfg)?;
        let sat_values: Vec<f64> =
            pair_index.iter().map(|&(i, j)| sm.values[i][j]).collect();

        let triplet_values: Vec<f64> = pair_index
            .par_iter()
            .map(|&(i, j)| {
                triplet_plane_similarity(
                    &models[i].model,
                    &models[j].model,
                    &points,
                    cfg.num_triplets,
                    cfg.triplet_grid,
                    seed,
                )
                .map(|o| o.similarity)
            })
            .collect::<Result<Vec<_>>>()?;

        let flip_samples = &points[..cfg.min_flip_points];
        let minflip_values: Vec<f64> = pair_index
            .par_iter()
            .map(|&(i, j)| {
                min_flip_distance(&models[i].model, &models[j].model, flip_samples, &cfg.min_flip)
                    .map(|o| o.similarity)
            })
            .collect::<Result<Vec<_>>>()?;

        // Pairs the similarity matrix excluded drop from every method.
        let keep: Vec<usize> =
            (0..pair_index.len()).filter(|&p| !sat_values[p].is_nan()).collect();
        let filter = |v: &[f64]| -> Vec<f64> { keep.iter().map(|&p| v[p]).collect() };
        let oracle_kept = filter(&oracle);

        let mut rho_of = |key: &str, values: &[f64]| -> f64 {
            match stats::spearman(values, &oracle_kept) {
                Ok(c) => c.coefficient,
                Err(e) => {
                    if degenerate.is_none() {
                        degenerate = Some(format!("{key} ranking at seed {seed}: {e}"));
                    }
                    f64::NAN
                }
            }
        };
        sat_rhos.push(rho_of("attack-transfer", &filter(&sat_values)));
        triplet_rhos.push(rho_of("triplet-plane", &filter(&triplet_values)));
        minflip_rhos.push(rho_of("min-flip", &filter(&minflip_values)));

        if si == 0 {
            first_values = Some((sat_values, triplet_values, minflip_values));
        }
    }

    let (sat_v, triplet_v, minflip_v) = first_values.expect("at least one seed ran");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let methods = vec![
        MethodRank {
            method: "attack-transfer".into(),
            rho: mean(&sat_rhos),
            rho_std: sample_std(&sat_rhos),
            values: sat_v,
        },
        MethodRank {
            method: "triplet-plane".into(),
            rho: mean(&triplet_rhos),
            rho_std: sample_std(&triplet_rhos),
            values: triplet_v,
        },
        MethodRank {
            method: "min-flip".into(),
            rho: mean(&minflip_rhos),
            rho_std: sample_std(&minflip_rhos),
            values: minflip_v,
        },
    ];
    Ok(BenchmarkReport {
        pair_names,
        oracle,
        methods,
        epsilon_used,
        seeds: cfg.seeds.clone(),
        degenerate,
    })
}

/// Every planar zoo member must clear this evaluation accuracy, so that
/// pair differences reflect boundary style rather than gross task failure
/// (an underfit member's missing decision region would dominate every one
/// of its pair scores).
pub const PLANAR_ACCURACY_FLOOR: f64 = 0.90;

const PLANAR_TRAIN_ATTEMPTS: u64 = 3;

/// Trains the standard planar zoo: `per_family` members of each family,
/// hidden widths stepped per member, all on ring data. A member that lands
/// under [`PLANAR_ACCURACY_FLOOR`] retrains with a shifted seed a bounded
/// number of times before the build fails.
pub fn train_planar_zoo(
    per_family: usize,
    train_n: usize,
    eval_n: usize,
    seed: u64,
    epochs: usize,
) -> Result<Vec<PlanarModel>> {
    if per_family == 0 {
        return Err(Error::Config("planar zoo needs ≥ 1 member per family".into()));
    }
    let train_set = ring_dataset(train_n, seed, Split::Train)?;
    let eval_set = ring_dataset(eval_n, seed, Split::Eval)?;
    let jobs: Vec<(PlanarFamily, String, usize, u64)> = PlanarFamily::ALL
        .iter()
        .flat_map(|&family| {
            (0..per_family).map(move |v| {
                let hidden = 12 + 6 * v;
                let name = format!("{}-h{hidden}", family.tag());
                (family, name, hidden, seed.wrapping_add(v as u64))
            })
        })
        .collect();
    let trained: Vec<Result<PlanarModel>> = jobs
        .par_iter()
        .map(|(family, name, hidden, model_seed)| {
            for attempt in 0..PLANAR_TRAIN_ATTEMPTS {
                let spec = planar_spec(*family, name, *hidden);
                let cfg = TrainConfig {
                    seed: model_seed.wrapping_add(1000 * attempt),
                    epochs,
                    batch_size: 32,
                    learning_rate: 0.1,
                    ..TrainConfig::default()
                };
                let model = train(spec, &train_set, &eval_set, &cfg, None)?;
                let acc = eval::accuracy(&model, &eval_set.images, &eval_set.labels)?;
                if acc >= PLANAR_ACCURACY_FLOOR {
                    if attempt > 0 {
                        log::info!("{name} cleared the floor on retry {attempt}: {acc:.3}");
                    }
                    return Ok(PlanarModel { model, family: *family });
                }
                log::warn!(
                    "{name} under the accuracy floor ({acc:.3} < {PLANAR_ACCURACY_FLOOR}), \
                     retraining with a shifted seed"
                );
            }
            Err(Error::Degenerate(format!(
                "{name} stayed under accuracy {PLANAR_ACCURACY_FLOOR} after \
                 {PLANAR_TRAIN_ATTEMPTS} attempts"
            )))
        })
        .collect();
    trained.into_iter().collect()
}
