//! Dense row-major tensors with a leading batch dimension.
//!
//! Images are laid out `[n, c, h, w]`, vectors `[n, d]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); len] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape {
                context: "tensor construction",
                expected: shape.to_vec(),
                found: vec![data.len()],
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Shape without the batch dimension.
    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    /// Number of elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.sample_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape {
                context: "reshape",
                expected: shape.to_vec(),
                found: self.shape.clone(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Collapses everything after the batch dimension.
    pub fn flatten(self) -> Self {
        let n = self.batch();
        let d = self.sample_len();
        Tensor { shape: vec![n, d], data: self.data }
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        crate::real::axpy(alpha, &other.data, &mut self.data);
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Rows `indices` of the batch, in that order.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    /// Concatenates along the batch dimension.
    pub fn concat(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("tensor concat"))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.sample_shape() != first.sample_shape() {
                return Err(Error::Shape {
                    context: "concat",
                    expected: first.shape.clone(),
                    found: p.shape.clone(),
                });
            }
            n += p.batch();
            data.extend_from_slice(&p.data);
        }
        shape[0] = n;
        Ok(Tensor { shape, data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn checksum(&self) -> u64 {
        crate::real::checksum(&self.data, crate::real::CHECKSUM_SEED)
    }

    pub(crate) fn expect_shape(&self, context: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape { context, expected: shape.to_vec(), found: self.shape.clone() });
        }
        Ok(())
    }

    pub(crate) fn expect_same_shape(&self, context: &'static str, other: &Self) -> Result<()> {
        self.expect_shape(context, &other.shape)
    }
}
