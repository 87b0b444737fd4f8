//! Flat row-major weight storage.

use serde::{Deserialize, Serialize};

/// A dense tensor: shape plus row-major f32 data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorBlob {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        TensorBlob { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        TensorBlob {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Shape product equals data length and every value is finite.
    pub fn is_consistent(&self) -> bool {
        self.element_count() == self.data.len() && self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, stricter than `==` (distinguishes -0.0 from 0.0).
    pub fn bits_eq(&self, other: &TensorBlob) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_checks_length_and_finiteness() {
        let t = TensorBlob::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert!(t.is_consistent());
        let short = TensorBlob::new(vec![2, 2], vec![1.0; 5]);
        assert!(!short.is_consistent());
        let nan = TensorBlob::new(vec![2], vec![1.0, f32::NAN]);
        assert!(!nan.is_consistent());
    }

    #[test]
    fn bits_eq_distinguishes_signed_zero() {
        let a = TensorBlob::new(vec![1], vec![0.0]);
        let b = TensorBlob::new(vec![1], vec![-0.0]);
        assert_eq!(a, b);
        assert!(!a.bits_eq(&b));
    }
}
