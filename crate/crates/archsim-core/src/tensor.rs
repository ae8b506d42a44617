//! Dense row-major f32 tensors.
//!
//! The first axis is always the batch axis. Image batches are stored as
//! `(N, H, W, C)`, flat feature batches as `(N, F)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, rejecting shape/length mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Config(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "tensor contains non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor without the finiteness scan. For internal activations,
    /// which are checked layer-by-layer instead.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Batch size (length of the first axis).
    pub fn n(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Elements per sample (product of all axes but the first).
    pub fn sample_numel(&self) -> usize {
        if self.shape.is_empty() { 0 } else { self.shape[1..].iter().product() }
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let sz = self.sample_numel();
        &self.data[i * sz..(i + 1) * sz]
    }


    /// New tensor holding the selected samples, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let sz = self.sample_numel();
        let mut data = Vec::with_capacity(indices.len() * sz);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::from_parts(shape, data)
    }

    /// Concatenates tensors along the batch axis. Per-sample shapes must match.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyBatch("concat of zero tensors".into()))?;
        let tail_shape = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if &p.shape[1..] != tail_shape {
                return Err(Error::Config(format!(
                    "concat shape mismatch: {:?} vs {:?}",
                    &p.shape[1..],
                    tail_shape
                )));
            }
            n += p.n();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Tensor::from_parts(shape, data))
    }

    /// Largest absolute elementwise difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![0.0, f32::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![0.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn gather_picks_rows() {
        let t = Tensor::new(vec![3, 2], vec![0., 1., 10., 11., 20., 21.]).unwrap();
        let g = t.gather(&[2, 0]);
        assert_eq!(g.shape(), &[2, 2]);
        assert_eq!(g.data(), &[20., 21., 0., 1.]);
    }
}
