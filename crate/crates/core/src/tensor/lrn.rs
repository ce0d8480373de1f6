use super::{same_shape, split_batch, Real, Tensor};
use crate::error::{Error, Result};

/// Cross-channel local response normalization:
///
/// `out[c] = in[c] / (k + alpha * sum_{|j - c| <= n} in[j]^2)^beta`
///
/// The window is clipped at the channel boundaries and `alpha` is not divided
/// by the window size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrnParams {
    pub depth_radius: usize,
    pub bias_k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LrnParams {
    pub fn new(depth_radius: usize, bias_k: f64, alpha: f64, beta: f64) -> Result<Self> {
        if depth_radius == 0 {
            return Err(Error::param("LRN depth radius must be positive"));
        }
        if !(bias_k > 0.0) {
            return Err(Error::param(format!("LRN bias must be > 0, got {bias_k}")));
        }
        Ok(Self {
            depth_radius,
            bias_k,
            alpha,
            beta,
        })
    }

    fn window(&self, c: usize, channels: usize) -> std::ops::RangeInclusive<usize> {
        c.saturating_sub(self.depth_radius)..=(c + self.depth_radius).min(channels - 1)
    }
}

/// Sum of `v` over each element's channel window, per sample.
fn window_sums<T: Real>(p: &LrnParams, v: &[T], c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    for (dst, src) in out.chunks_mut(c * hw).zip(v.chunks(c * hw)) {
        for ch in 0..c {
            let d = &mut dst[ch * hw..(ch + 1) * hw];
            for j in p.window(ch, c) {
                d.iter_mut()
                    .zip(&src[j * hw..(j + 1) * hw])
                    .for_each(|(a, &b)| *a += b);
            }
        }
    }
    out
}

/// Denominators `k + alpha * window_sum(x^2)`.
fn denominators<T: Real>(p: &LrnParams, x: &[T], c: usize, hw: usize) -> Vec<T> {
    let (k, alpha) = (T::from_f64(p.bias_k), T::from_f64(p.alpha));
    let sq: Vec<T> = x.iter().map(|&v| v * v).collect();
    let mut den = window_sums(p, &sq, c, hw);
    den.iter_mut().for_each(|d| *d = k + alpha * *d);
    den
}

fn shape_parts(shape: &[usize]) -> Result<(usize, usize, usize)> {
    let (n, s) = split_batch(shape, 3)?;
    Ok((n * s[0], s[0], s[1] * s[2]))
}

/// `d^-beta` for every denominator; `beta = 0.75` avoids `powf`.
fn inverse_powers<T: Real>(den: &[T], beta: f64) -> Vec<T> {
    if beta == 0.75 {
        den.iter()
            .map(|&d| {
                let r = d.sqrt();
                T::one() / (r * r.sqrt())
            })
            .collect()
    } else {
        let b = T::from_f64(beta);
        den.iter().map(|&d| d.powf(-b)).collect()
    }
}

/// Forward over `[C, H, W]` or `[N, C, H, W]`.
pub fn lrn<T: Real>(params: &LrnParams, input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, hw) = shape_parts(input.shape())?;
    let x = input.data();
    let den = denominators(params, x, c, hw);
    let scale = inverse_powers(&den, params.beta);
    Tensor::new(
        input.shape(),
        x.iter().zip(&scale).map(|(&v, &s)| v * s).collect(),
    )
}

/// `dL/dx[j] = g[j] d[j]^-b - 2 a b x[j] sum_{i in W(j)} g[i] x[i] d[i]^(-b-1)`
pub fn lrn_backward<T: Real>(
    params: &LrnParams,
    input: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    same_shape(input.shape(), grad_output.shape())?;
    let (_, c, hw) = shape_parts(input.shape())?;
    let x = input.data();
    let g = grad_output.data();
    let den = denominators(params, x, c, hw);
    let scale = inverse_powers(&den, params.beta);
    let two_ab = T::from_f64(2.0 * params.alpha * params.beta);

    // r[i] = g[i] x[i] d[i]^(-beta-1)
    let r: Vec<T> = (0..x.len())
        .map(|i| g[i] * x[i] * scale[i] / den[i])
        .collect();
    let rsum = window_sums(params, &r, c, hw);
    let grad = (0..x.len())
        .map(|i| g[i] * scale[i] - two_ab * x[i] * rsum[i])
        .collect();
    Tensor::new(input.shape(), grad)
}
