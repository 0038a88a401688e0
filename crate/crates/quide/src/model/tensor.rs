//! Flat row-major f32 tensor.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// A dense tensor: `shape` dimensions over a flat row-major `data` buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    /// Validating constructor: length must match the shape product and all
    /// values must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ModelError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ModelError::TensorShape {
                shape,
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for freshly computed buffers; skips the finite
    /// scan on hot paths.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(ModelError::TensorShape { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f32::NAN]),
            Err(ModelError::NonFinite)
        ));
    }

    #[test]
    fn zeros_shape() {
        let t = Tensor::zeros(vec![4, 2]);
        assert_eq!(t.numel(), 8);
        assert!(t.data.iter().all(|&v| v == 0.0));
    }
}
