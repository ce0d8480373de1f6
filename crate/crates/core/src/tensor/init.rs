use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Real, RngState, Tensor};
use crate::error::{Error, Result};

/// I.i.d. normal draws.
pub fn init_gaussian<T: Real>(
    rng: &mut RngState,
    shape: impl Into<Vec<usize>>,
    mean: f64,
    std: f64,
) -> Result<Tensor<T>> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::param(format!(
            "standard deviation must be >= 0, got {std}"
        )));
    }
    let normal = Normal::new(mean, std).map_err(|e| Error::param(e.to_string()))?;
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(normal.sample(rng));
    }
    Ok(t)
}

/// `(fan_in, fan_out)` of a weight tensor: conv kernels `[out, in, kh, kw]`
/// count the receptive field on both sides, dense weights are `[out, in]`.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [out, inp, kh, kw] => (inp * kh * kw, out * kh * kw),
        [out, inp] => (inp, out),
        _ => {
            let n = shape.iter().product();
            (n, n)
        }
    }
}

/// Uniform on `[-L, L]` with `L = sqrt(6 / (fan_in + fan_out))`.
pub fn init_glorot_uniform<T: Real>(rng: &mut RngState, shape: impl Into<Vec<usize>>) -> Tensor<T> {
    let shape = shape.into();
    let (fan_in, fan_out) = fans(&shape);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let uniform = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(rng.sample(uniform));
    }
    t
}

pub fn init_constant<T: Real>(shape: impl Into<Vec<usize>>, value: f64) -> Tensor<T> {
    Tensor::full(shape, T::from_f64(value))
}
