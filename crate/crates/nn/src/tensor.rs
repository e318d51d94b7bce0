use crate::error::{NnError, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(NnError::InvalidInput(format!(
                "dims {:?} need {} values, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(NnError::InvalidInput(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Adds `other` elementwise; dims must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}
