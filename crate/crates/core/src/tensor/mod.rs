//! Minimal deterministic tensor engine.
//!
//! Every operation is a pure function of its inputs: forward functions return
//! fresh tensors and backward functions take whatever the forward pass needs
//! (usually the original input) plus the upstream gradient. Spatial operations
//! accept either a single sample (`[C, H, W]`) or a batch (`[N, C, H, W]`).

mod activation;
pub mod checkpoint;
mod conv;
mod denormal;
mod dense;
pub mod gradcheck;
mod init;
mod loss;
mod lrn;
mod optim;
mod pool;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::LinalgScalar;
use num_traits::Float;

use crate::error::{Error, Result};

pub use activation::{dropout, dropout_backward, relu, relu_backward, Dropped};
pub use conv::{conv2d, conv2d_backward, conv2d_backward_params, Conv2dGrads, Conv2dParams};
pub use denormal::FlushDenormals;
pub use dense::{dense, dense_backward, DenseGrads, DenseParams};
pub use init::{fans, init_constant, init_gaussian, init_glorot_uniform};
pub use loss::{softmax, softmax_cross_entropy};
pub use lrn::{lrn, lrn_backward, LrnParams};
pub use optim::{adam_step, sgd_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, max_pool2d, max_pool2d_backward,
    max_pool2d_with_indices,
};
pub use rng::RngState;

/// Floating point element type. `f32` is the default precision; `f64` is used
/// for gradient checking.
pub trait Real:
    Float
    + LinalgScalar
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    /// Panics if any extent is zero.
    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        check_shape(&shape).expect("tensor extents must be positive");
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &extent)| {
            assert!(i < extent, "index {index:?} outside shape {:?}", self.shape);
            acc * extent + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        same_shape(self.shape(), other.shape())?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::dim(format!(
            "tensor extents must be positive and non-empty, got {shape:?}"
        )));
    }
    Ok(())
}

pub(crate) fn same_shape(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("shape mismatch {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Splits an optionally batched shape into `(batch, sample_shape)`.
pub(crate) fn split_batch(shape: &[usize], sample_rank: usize) -> Result<(usize, &[usize])> {
    if shape.len() == sample_rank {
        Ok((1, shape))
    } else if shape.len() == sample_rank + 1 {
        Ok((shape[0], &shape[1..]))
    } else {
        Err(Error::dim(format!(
            "expected rank {sample_rank} or {} input, got shape {shape:?}",
            sample_rank + 1
        )))
    }
}

/// Rebuilds an output shape with the same batching convention as `input`.
pub(crate) fn batched_shape(input: &[usize], sample_rank: usize, sample: &[usize]) -> Vec<usize> {
    if input.len() == sample_rank {
        sample.to_vec()
    } else {
        std::iter::once(input[0])
            .chain(sample.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::<f32>::from_fn(vec![2, 3, 4], |i| i as f32);
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
        assert_eq!(t.get(&[0, 1, 0]), 4.0);
    }

    #[test]
    fn reshape_keeps_values() {
        let t = Tensor::<f64>::from_fn(vec![6], |i| i as f64);
        let r = t.clone().reshape(vec![2, 3]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4]).is_err());
    }
}
