use super::{batched_shape, split_batch, Real, Tensor};
use crate::error::{Error, Result};

/// Max pooling without padding; trailing rows/cols that do not fill a window
/// are dropped (floor mode).
pub fn max_pool2d<T: Real>(
    input: &Tensor<T>,
    pool: (usize, usize),
    stride: usize,
) -> Result<Tensor<T>> {
    max_pool2d_with_indices(input, pool, stride).map(|(out, _)| out)
}

/// Like [`max_pool2d`], also returning the flat input offset of each window's
/// maximum (first in scan order on ties).
pub fn max_pool2d_with_indices<T: Real>(
    input: &Tensor<T>,
    pool: (usize, usize),
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, s) = split_batch(input.shape(), 3)?;
    let (c, h, w) = (s[0], s[1], s[2]);
    let (ph, pw) = pool;
    if ph == 0 || pw == 0 || stride == 0 {
        return Err(Error::param("pool window and stride must be positive"));
    }
    if h < ph || w < pw {
        return Err(Error::dim(format!(
            "pool {ph}x{pw} larger than input {h}x{w}"
        )));
    }
    let (ho, wo) = ((h - ph) / stride + 1, (w - pw) / stride + 1);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(out.capacity());
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..ph {
                    for dx in 0..pw {
                        let i = base + (oy * stride + dy) * w + ox * stride + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    let shape = batched_shape(input.shape(), 3, &[c, ho, wo]);
    Ok((Tensor::new(shape, out)?, arg))
}

pub fn max_pool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_output.len() {
        return Err(Error::dim("argmax and gradient lengths differ"));
    }
    let mut grad = Tensor::zeros(input_shape.to_vec());
    let g = grad.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_output.data()) {
        g[i] += v;
    }
    Ok(grad)
}

/// Per-channel spatial mean: `[C, H, W] -> [C]`, `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, s) = split_batch(input.shape(), 3)?;
    let (c, hw) = (s[0], s[1] * s[2]);
    let scale = T::one() / T::from_f64(hw as f64);
    let out = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * scale)
        .collect();
    let shape = if input.rank() == 3 {
        vec![c]
    } else {
        vec![n, c]
    };
    Tensor::new(shape, out)
}

pub fn global_avg_pool_backward<T: Real>(
    input_shape: &[usize],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, s) = split_batch(input_shape, 3)?;
    let (c, hw) = (s[0], s[1] * s[2]);
    if grad_output.len() != n * c {
        return Err(Error::dim("GAP gradient length mismatch"));
    }
    let scale = T::one() / T::from_f64(hw as f64);
    let data = grad_output
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, hw))
        .collect();
    Tensor::new(input_shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{init_gaussian, RngState};

    #[test]
    fn constant_input() {
        let x = Tensor::<f32>::full(vec![2, 4, 6], 3.5);
        let y = max_pool2d(&x, (2, 2), 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn ramp_4x4() {
        let x = Tensor::<f32>::from_fn(vec![1, 4, 4], |i| i as f32);
        let y = max_pool2d(&x, (2, 2), 2).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn matches_window_scan() {
        let x: Tensor<f64> = init_gaussian(&mut RngState::new(2), vec![3, 9, 9], 0.0, 1.0).unwrap();
        let y = max_pool2d(&x, (2, 2), 2).unwrap();
        assert_eq!(y.shape(), &[3, 4, 4]);
        for c in 0..3 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.get(&[c, 2 * oy + dy, 2 * ox + dx]));
                        }
                    }
                    assert_eq!(y.get(&[c, oy, ox]), m);
                }
            }
        }
    }

    #[test]
    fn ties_route_to_first() {
        let x = Tensor::<f32>::full(vec![1, 2, 2], 1.0);
        let (_, arg) = max_pool2d_with_indices(&x, (2, 2), 2).unwrap();
        assert_eq!(arg, vec![0]);
        let g = max_pool2d_backward(x.shape(), &arg, &Tensor::full(vec![1, 1, 1], 2.0)).unwrap();
        assert_eq!(g.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn oversized_pool() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 3]);
        assert!(matches!(
            max_pool2d(&x, (2, 2), 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gap_values() {
        let x = Tensor::<f32>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::<f32>::full(vec![3, 5, 5], -0.5);
        assert!(global_avg_pool(&c)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == -0.5));
    }

    #[test]
    fn gap_matches_mean() {
        let x: Tensor<f64> = init_gaussian(&mut RngState::new(6), vec![8, 5, 5], 0.0, 1.0).unwrap();
        let y = global_avg_pool(&x).unwrap();
        for c in 0..8 {
            let mut s = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    s += x.get(&[c, i, j]);
                }
            }
            assert!((y.data()[c] - s / 25.0).abs() < 1e-12);
        }
        let g = global_avg_pool_backward(x.shape(), &Tensor::<f64>::full(vec![8], 1.0)).unwrap();
        assert!(g.data().iter().all(|&v| (v - 0.04).abs() < 1e-15));
    }
}
