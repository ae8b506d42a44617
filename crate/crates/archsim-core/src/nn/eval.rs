//! Batch evaluation helpers.
//!
//! Inference is per-sample independent (norm layers use stored statistics),
//! so batches are split into fixed-size chunks evaluated in parallel. The
//! chunking is independent of thread count, and per-sample results do not
//! depend on which chunk a sample lands in, so outputs are bit-identical
//! across thread configurations.

use rayon::prelude::*;

use crate::error::Result;
use crate::nn::Model;
use crate::tensor::Tensor;

pub(crate) const EVAL_CHUNK: usize = 64;

/// Inference logits for a batch of any size, chunked and parallel.
pub fn logits(model: &Model, images: &Tensor) -> Result<Tensor> {
    if images.n() <= EVAL_CHUNK {
        return model.forward(images);
    }
    let indices: Vec<usize> = (0..images.n()).collect();
    let parts: Vec<Result<Tensor>> = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| model.forward(&images.gather(chunk)))
        .collect();
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Tensor::concat(&parts)
}

/// Argmax class per sample; ties resolve to the lowest class index.
pub fn predictions(model: &Model, images: &Tensor) -> Result<Vec<usize>> {
    let out = logits(model, images)?;
    Ok(argmax_rows(&out))
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.sample_numel();
    logits
        .data()
        .chunks_exact(k)
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

/// Fraction of samples classified correctly.
pub fn accuracy(model: &Model, images: &Tensor, labels: &[usize]) -> Result<f64> {
    let preds = predictions(model, images)?;
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}
