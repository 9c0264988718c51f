//! Dense real/complex tensors, a reverse-mode tape, radix-2 FFTs, parameter
//! initialization and finite-difference gradient checking.
//!
//! Gradients of complex tensors follow the conjugate convention: for a real
//! loss `L` and a complex entry `z = a + ib` the stored gradient is
//! `dL/da + i dL/db`, so a real step `z - lr * grad` decreases `L` to first
//! order.

pub mod fft;
mod gradcheck;
mod init;
mod ops;
mod tape;

use std::sync::Arc;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use init::{init_param, InitScheme, ParamId, ParamStore, Parameter};
pub use num_complex::Complex64 as C64;
pub use ops::wavenumber;
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::Real(v) => v.len(),
            Data::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Immutable row-major tensor. Cloning shares the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Data>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: &[usize], data: Data) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn real(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::new(shape, Data::Real(values))
    }

    pub fn complex(shape: &[usize], values: Vec<C64>) -> Result<Self> {
        Self::new(shape, Data::Complex(values))
    }

    pub(crate) fn from_real(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), values.len());
        Tensor {
            shape,
            data: Arc::new(Data::Real(values)),
        }
    }

    pub(crate) fn from_complex(shape: Vec<usize>, values: Vec<C64>) -> Self {
        debug_assert_eq!(numel(&shape), values.len());
        Tensor {
            shape,
            data: Arc::new(Data::Complex(values)),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_real(vec![], vec![value])
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        let n = numel(shape);
        match dtype {
            DType::Real => Self::from_real(shape.to_vec(), vec![0.0; n]),
            DType::Complex => Self::from_complex(shape.to_vec(), vec![C64::new(0.0, 0.0); n]),
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::from_real(shape.to_vec(), vec![1.0; numel(shape)])
    }

    /// Identity matrix of size `n`.
    pub fn eye(n: usize) -> Self {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Self::from_real(vec![n, n], v)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        match &*self.data {
            Data::Real(_) => DType::Real,
            Data::Complex(_) => DType::Complex,
        }
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn real_data(&self) -> Result<&[f64]> {
        match &*self.data {
            Data::Real(v) => Ok(v),
            Data::Complex(_) => Err(Error::Dtype("expected a real tensor".into())),
        }
    }

    pub fn complex_data(&self) -> Result<&[C64]> {
        match &*self.data {
            Data::Complex(v) => Ok(v),
            Data::Real(_) => Err(Error::Dtype("expected a complex tensor".into())),
        }
    }

    /// Real values; panics on complex tensors. Internal use where the dtype
    /// has already been checked.
    pub(crate) fn re(&self) -> &[f64] {
        match &*self.data {
            Data::Real(v) => v,
            Data::Complex(_) => panic!("real tensor expected"),
        }
    }

    pub(crate) fn cx(&self) -> &[C64] {
        match &*self.data {
            Data::Complex(v) => v,
            Data::Real(_) => panic!("complex tensor expected"),
        }
    }

    /// Value of a one-element real tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.real_data()?[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn to_complex(&self) -> Self {
        match &*self.data {
            Data::Complex(_) => self.clone(),
            Data::Real(v) => Self::from_complex(
                self.shape.clone(),
                v.iter().map(|&x| C64::new(x, 0.0)).collect(),
            ),
        }
    }

    pub fn to_vec_real(&self) -> Result<Vec<f64>> {
        Ok(self.real_data()?.to_vec())
    }

    /// Elementwise sum of two tensors of the same shape and dtype.
    pub(crate) fn add_same(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        match (&*self.data, &*other.data) {
            (Data::Real(a), Data::Real(b)) => Self::from_real(
                self.shape.clone(),
                a.iter().zip(b).map(|(x, y)| x + y).collect(),
            ),
            (Data::Complex(a), Data::Complex(b)) => Self::from_complex(
                self.shape.clone(),
                a.iter().zip(b).map(|(x, y)| x + y).collect(),
            ),
            (Data::Complex(a), Data::Real(b)) => Self::from_complex(
                self.shape.clone(),
                a.iter().zip(b).map(|(x, y)| x + y).collect(),
            ),
            (Data::Real(a), Data::Complex(b)) => Self::from_complex(
                self.shape.clone(),
                a.iter().zip(b).map(|(x, y)| y + x).collect(),
            ),
        }
    }

    pub fn is_finite(&self) -> bool {
        match &*self.data {
            Data::Real(v) => v.iter().all(|x| x.is_finite()),
            Data::Complex(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
        }
    }

    /// Largest absolute elementwise difference; `None` on shape/dtype mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        match (&*self.data, &*other.data) {
            (Data::Real(a), Data::Real(b)) => Some(
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max),
            ),
            (Data::Complex(a), Data::Complex(b)) => Some(
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max),
            ),
            _ => None,
        }
    }
}
