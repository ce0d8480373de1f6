use super::{split_batch, Real, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax over the last axis of `[c]` or `[N, c]`.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, s) = split_batch(logits.shape(), 1)?;
    let c = s[0];
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::new(logits.shape(), out)
}

/// Mean cross-entropy of softmax(logits) against class indices, with its
/// gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (n, s) = split_batch(logits.shape(), 1)?;
    let c = s[0];
    if targets.len() != n {
        return Err(Error::dim(format!(
            "{} targets for a batch of {n}",
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Bounds(format!("class index {bad} with {c} classes")));
    }
    let mut grad = Vec::with_capacity(n * c);
    let mut loss = T::zero();
    let inv_n = T::one() / T::from_f64(n as f64);
    for (row, &t) in logits.data().chunks(c).zip(targets) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = z.ln() + max;
        loss += log_z - row[t];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let onehot = if j == t { T::one() } else { T::zero() };
            grad.push((p - onehot) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::new(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{init_gaussian, RngState};

    #[test]
    fn uniform_logits() {
        let logits = Tensor::<f64>::full(vec![4], 0.3);
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        for (j, &g) in grad.data().iter().enumerate() {
            let expect = 0.25 - if j == 2 { 1.0 } else { 0.0 };
            assert!((g - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn large_logits_stable() {
        let logits = Tensor::<f32>::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(grad.is_finite());
    }

    #[test]
    fn out_of_range_class() {
        let logits = Tensor::<f32>::zeros(vec![3]);
        assert!(softmax_cross_entropy(&logits, &[3]).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = RngState::new(21);
        let logits: Tensor<f64> = init_gaussian(&mut rng, vec![6], 0.0, 2.0).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[4]).unwrap();
        let eps = 1e-6;
        for j in 0..6 {
            let mut hi = logits.clone();
            hi.data_mut()[j] += eps;
            let mut lo = logits.clone();
            lo.data_mut()[j] -= eps;
            let fd = (softmax_cross_entropy(&hi, &[4]).unwrap().0
                - softmax_cross_entropy(&lo, &[4]).unwrap().0)
                / (2.0 * eps);
            let g = grad.data()[j];
            assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-8));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits: Tensor<f64> =
            init_gaussian(&mut RngState::new(3), vec![5, 7], 0.0, 30.0).unwrap();
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
