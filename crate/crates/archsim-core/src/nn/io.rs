//! Model persistence: a JSON document (`archsim-model/1`) describing the spec
//! and parameter manifest, next to a raw little-endian f32 weight blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::nn::{param_specs, Model, ModelSpec, TrainingMeta};
use crate::tensor::Tensor;

pub const MODEL_FORMAT: &str = "archsim-model/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    /// Byte offset into the weight blob.
    offset: u64,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ModelDoc {
    format: String,
    spec: ModelSpec,
    weights_file: String,
    manifest: Vec<ManifestEntry>,
    training_meta: TrainingMeta,
}

/// Writes `<stem>.json` and `<stem>.bin` atomically. `stem` is a path without
/// extension; the JSON references the blob by file name.
pub fn save_model(model: &Model, stem: &Path) -> Result<()> {
    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let bin_name = bin_path
        .file_name()
        .ok_or_else(|| Error::Config(format!("bad model path {stem:?}")))?
        .to_string_lossy()
        .into_owned();

    let mut manifest = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for p in param_specs(model.spec())? {
        let tensor = &model.weights()[&p.name];
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            offset: blob.len() as u64,
            shape: tensor.shape().to_vec(),
        });
        for &v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let doc = ModelDoc {
        format: MODEL_FORMAT.to_string(),
        spec: model.spec().clone(),
        weights_file: bin_name,
        manifest,
        training_meta: model.meta().clone(),
    };
    atomic_write(&bin_path, &blob)?;
    atomic_write(&json_path, &serde_json::to_vec_pretty(&doc)?)?;
    Ok(())
}

/// Loads a model saved by [`save_model`]. Validates the format header, the
/// manifest against the spec's parameter inventory, and the blob length.
pub fn load_model(json_path: &Path) -> Result<Model> {
    let text = fs::read_to_string(json_path)?;
    let doc: ModelDoc = serde_json::from_str(&text)?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "{}: expected format {MODEL_FORMAT}, found {}",
            json_path.display(),
            doc.format
        )));
    }
    let bin_path: PathBuf = json_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&doc.weights_file);
    let blob = fs::read(&bin_path)?;

    let specs = param_specs(&doc.spec)?;
    if specs.len() != doc.manifest.len() {
        return Err(Error::Format(format!(
            "{}: manifest has {} entries, spec expects {}",
            json_path.display(),
            doc.manifest.len(),
            specs.len()
        )));
    }
    let mut weights = BTreeMap::new();
    let mut expected_offset = 0u64;
    for (p, entry) in specs.iter().zip(&doc.manifest) {
        if entry.name != p.name || entry.shape != p.shape {
            return Err(Error::Format(format!(
                "{}: manifest entry {} {:?} does not match spec parameter {} {:?}",
                json_path.display(),
                entry.name,
                entry.shape,
                p.name,
                p.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Format(format!(
                "{}: parameter {} at offset {}, expected {}",
                json_path.display(),
                entry.name,
                entry.offset,
                expected_offset
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let nbytes = numel * 4;
        let start = entry.offset as usize;
        if blob.len() < start + nbytes {
            return Err(Error::Format(format!(
                "{}: weight blob ends before parameter {}",
                json_path.display(),
                entry.name
            )));
        }
        let data: Vec<f32> = blob[start..start + nbytes]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        weights.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
        expected_offset += nbytes as u64;
    }
    if blob.len() as u64 != expected_offset {
        return Err(Error::Format(format!(
            "{}: weight blob has {} bytes, manifest accounts for {}",
            json_path.display(),
            blob.len(),
            expected_offset
        )));
    }
    Model::from_parts(doc.spec, weights, doc.training_meta)
}
