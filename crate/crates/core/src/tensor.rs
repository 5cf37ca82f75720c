//! Dense complex tensor used by the DSP front end and the network.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);

/// Row-major complex tensor of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![ZERO; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<C64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::shape(format!("rank {} unsupported", shape.len())));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![C64::new(v, 0.0)],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}
