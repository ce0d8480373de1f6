use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{batched_shape, same_shape, split_batch, Real, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `out = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T = f32> {
    /// `[out_units, in_units]`
    pub weight: Tensor<T>,
    /// `[out_units]`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

impl<T: Real> DenseParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::dim(format!(
                "dense weight {:?} / bias {:?} are inconsistent",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_units(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_units(&self) -> usize {
        self.weight.shape()[0]
    }

    fn batch(&self, input: &Tensor<T>) -> Result<usize> {
        let (n, sample) = split_batch(input.shape(), 1)?;
        if sample[0] != self.in_units() {
            return Err(Error::dim(format!(
                "dense expects {} inputs, got {}",
                self.in_units(),
                sample[0]
            )));
        }
        Ok(n)
    }
}

/// Forward over `[in]` or `[N, in]`.
pub fn dense<T: Real>(params: &DenseParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let n = params.batch(input)?;
    let (din, dout) = (params.in_units(), params.out_units());
    let x = ArrayView2::from_shape((n, din), input.data()).expect("input layout");
    let w = ArrayView2::from_shape((dout, din), params.weight.data()).expect("weight layout");
    let mut out: Vec<T> = (0..n)
        .flat_map(|_| params.bias.data().iter().copied())
        .collect();
    general_mat_mul(
        T::one(),
        &x,
        &w.t(),
        T::one(),
        &mut ArrayViewMut2::from_shape((n, dout), &mut out).expect("output layout"),
    );
    Tensor::new(batched_shape(input.shape(), 1, &[dout]), out)
}

pub fn dense_backward<T: Real>(
    params: &DenseParams<T>,
    input: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let n = params.batch(input)?;
    let (din, dout) = (params.in_units(), params.out_units());
    same_shape(
        grad_output.shape(),
        &batched_shape(input.shape(), 1, &[dout]),
    )?;
    let x = ArrayView2::from_shape((n, din), input.data()).expect("input layout");
    let w = ArrayView2::from_shape((dout, din), params.weight.data()).expect("weight layout");
    let go = ArrayView2::from_shape((n, dout), grad_output.data()).expect("grad layout");

    let mut gw = vec![T::zero(); dout * din];
    general_mat_mul(
        T::one(),
        &go.t(),
        &x,
        T::zero(),
        &mut ArrayViewMut2::from_shape((dout, din), &mut gw).expect("weight layout"),
    );
    let mut gx = vec![T::zero(); n * din];
    general_mat_mul(
        T::one(),
        &go,
        &w,
        T::zero(),
        &mut ArrayViewMut2::from_shape((n, din), &mut gx).expect("input layout"),
    );
    let mut gb = vec![T::zero(); dout];
    for row in grad_output.data().chunks(dout) {
        gb.iter_mut().zip(row).for_each(|(b, &g)| *b += g);
    }
    Ok(DenseGrads {
        weight: Tensor::new(vec![dout, din], gw)?,
        bias: Tensor::new(vec![dout], gb)?,
        input: Tensor::new(input.shape(), gx)?,
    })
}
