//! Named parameter storage.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64};

/// Ordered collection of named complex parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of complex entries across all tensors.
    pub fn complex_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor, checking names and shapes.
    pub fn assign(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::shape("parameter names differ"));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!(
                    "parameter shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }

    /// Rounds every entry to the nearest `f32`, so that the stored values
    /// survive a single-precision checkpoint unchanged.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            round_tensor_f32(t);
        }
    }
}

pub(crate) fn round_tensor_f32(t: &mut Tensor) {
    for z in t.data_mut() {
        *z = C64::new(z.re as f32 as f64, z.im as f32 as f64);
    }
}

/// Tensor with real and imaginary parts drawn independently from `U[-bound, bound]`.
pub fn uniform_tensor<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for z in t.data_mut() {
        let re = rng.gen_range(-bound..=bound);
        let im = rng.gen_range(-bound..=bound);
        *z = C64::new(re, im);
    }
    round_tensor_f32(&mut t);
    t
}

pub fn filled_tensor(shape: &[usize], value: C64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().fill(value);
    t
}
