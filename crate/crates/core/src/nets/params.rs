use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{checksum, Real, CHECKSUM_SEED};

/// One named parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// The learnable parameter set of one network, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub init_seed: u64,
    pub params: Vec<Param<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            init_seed: self.init_seed,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![T::zero(); p.data.len()],
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Flat view index → (array, offset); used for coordinate-wise checks.
    pub fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, p) in self.params.iter().enumerate() {
            if flat < p.data.len() {
                return (i, flat);
            }
            flat -= p.data.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(CHECKSUM_SEED, |h, p| checksum(&p.data, h))
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            init_seed: self.init_seed,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// `self += alpha * other`, parameter by parameter.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            crate::real::axpy(alpha, &q.data, &mut p.data);
        }
    }

    /// Checks names and shapes against a template (e.g. a freshly built set).
    pub fn conforms_to(&self, template: &Self) -> Result<()> {
        if self.params.len() != template.params.len() {
            return Err(Error::Params(alloc::format!(
                "expected {} arrays, found {}",
                template.params.len(),
                self.params.len()
            )));
        }
        for (p, q) in self.params.iter().zip(&template.params) {
            if p.name != q.name || p.shape != q.shape || p.data.len() != q.data.len() {
                return Err(Error::Params(alloc::format!(
                    "array `{}` {:?} does not match `{}` {:?}",
                    p.name,
                    p.shape,
                    q.name,
                    q.shape
                )));
            }
        }
        Ok(())
    }
}
