use rand::Rng;

use super::{same_shape, Real, RngState, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Gradient passes where the input is strictly positive (zero at the kink).
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(input.shape(), grad_output.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Output of [`dropout`]. `mask` holds the per-element multiplier
/// (`0` or `1 / (1 - rate)`) and is `None` when the op was an identity.
#[derive(Clone, Debug)]
pub struct Dropped<T = f32> {
    pub output: Tensor<T>,
    pub mask: Option<Tensor<T>>,
}

/// Inverted dropout: surviving elements are rescaled during training so that
/// inference is the identity.
pub fn dropout<T: Real>(
    rng: &mut RngState,
    rate: f64,
    input: &Tensor<T>,
    training: bool,
) -> Result<Dropped<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok(Dropped {
            output: input.clone(),
            mask: None,
        });
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    // one u32 per element, drawn in bulk; element dropped when u < rate * 2^32
    let mut draws = vec![0u32; input.len()];
    rng.fill(&mut draws[..]);
    let threshold = (rate * 4_294_967_296.0) as u64;
    let mut draws = draws.into_iter();
    let mask = Tensor::from_fn(input.shape(), |_| {
        if u64::from(draws.next().expect("one draw per element")) < threshold {
            T::zero()
        } else {
            keep
        }
    });
    let output = Tensor::new(
        input.shape(),
        input
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&x, &m)| x * m)
            .collect(),
    )?;
    Ok(Dropped {
        output,
        mask: Some(mask),
    })
}

pub fn dropout_backward<T: Real>(
    mask: Option<&Tensor<T>>,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    match mask {
        None => Ok(grad_output.clone()),
        Some(m) => {
            same_shape(m.shape(), grad_output.shape())?;
            Tensor::new(
                grad_output.shape(),
                grad_output
                    .data()
                    .iter()
                    .zip(m.data())
                    .map(|(&g, &k)| g * k)
                    .collect(),
            )
        }
    }
}
