use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::{Error, Result};

/// Shape-annotated flat buffer of `f32` in a backend's working space.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBuffer {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl TensorBuffer {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel = checked_numel(&shape)?;
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!("non-finite value at {pos}")));
        }
        Ok(TensorBuffer { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        Ok(TensorBuffer { shape, data: vec![0.0; n] })
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorBuffer { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ensure_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Squared L2 distance, accumulated in f64.
    pub fn sq_dist(&self, other: &TensorBuffer) -> Result<f64> {
        other.ensure_shape(&self.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = *a as f64 - *b as f64;
                d * d
            })
            .sum())
    }

    /// Little-endian f32 bytes, base64 encoded.
    pub fn data_b64(&self) -> String {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        STANDARD.encode(bytes)
    }

    pub fn from_b64(shape: Vec<usize>, data_b64: &str) -> Result<Self> {
        let bytes = STANDARD
            .decode(data_b64)
            .map_err(|e| Error::InvalidTensor(format!("base64: {e}")))?;
        let numel = checked_numel(&shape)?;
        if bytes.len() != numel * 4 {
            return Err(Error::InvalidTensor(format!(
                "payload has {} bytes, shape {shape:?} needs {}",
                bytes.len(),
                numel * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }
}

pub(crate) fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidTensor(format!("shape {shape:?} must have positive dimensions")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidTensor(format!("shape {shape:?} overflows")))
}
