//! Plain n-dimensional value arrays (no gradient tracking).
//!
//! Row-major storage. Used for features, predictions, parameters at rest and
//! file I/O; graph tensors live on the [`Tape`](super::Tape).

use super::element::Element;
use crate::error::{Result, SeldError};

#[derive(Clone, Debug, PartialEq)]
pub struct Array<E> {
    pub data: Vec<E>,
    pub shape: Vec<usize>,
}

impl<E: Element> Array<E> {
    pub fn new(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SeldError::Shape(format!(
                "array data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Array { data, shape: shape.to_vec() })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Array { data: vec![E::ZERO; shape.iter().product()], shape: shape.to_vec() }
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        Array { data: vec![v; shape.iter().product()], shape: shape.to_vec() }
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| E::from_f64(v)).collect(), shape)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Cast between element types (used when loading f32 checkpoints for f64
    /// verification runs and vice versa).
    pub fn cast<T: Element>(&self) -> Array<T> {
        Array {
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
            shape: self.shape.clone(),
        }
    }
}

/// Row-major strides for a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}
