//! Core library for measuring similarity between image classifiers through
//! adversarial transferability, and for the analyses built on top of it:
//! spectral clustering of the similarity matrix, architectural feature
//! importance, ensemble error reduction, distillation effects, and planar
//! decision-boundary comparisons.
//!
//! Everything is deterministic given explicit seeds: random draws come from
//! named counter-based streams, accumulation orders are fixed, and
//! parallelism is only applied across independent units of work.

pub mod archfeat;
pub mod attacks;
pub mod boundary;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod gbm;
pub mod io;
pub mod nn;
pub mod resize;
pub mod rng;
pub mod sat;
pub mod spectral;
pub mod stats;
pub mod tensor;
pub mod viz;
pub mod zoo;

pub use archfeat::ArchFeatureRecord;
pub use attacks::{AdvBatch, AttackConfig, AttackMethod};
pub use boundary::{BenchmarkConfig, BenchmarkReport, PlanarDomain, PlanarFamily, PlanarModel};
pub use ensemble::{EnsembleResult, LogitCache};
pub use error::{Error, Result};
pub use gbm::{GbmConfig, GbmRegressor};
pub use nn::train::{LabelMode, Schedule, TrainConfig};
pub use nn::{LayerSpec, Model, ModelSpec};
pub use sat::{SatConfig, SatScore, SimilarityMatrix};
pub use spectral::{AdjacencyMode, ClusterAssignment, ClusterConfig};
pub use tensor::Tensor;
pub use zoo::{Dataset, Split};
