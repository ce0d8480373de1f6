//! Central-difference validation of analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::error::{Error, Result};

/// Largest relative discrepancy between the analytic gradient returned by
/// `loss_fn` and a central difference. The loss is reported in `f64` so that
/// 32-bit layers can accumulate it without extra rounding, over `coords` (all coordinates when
/// `None`). The denominator is `max(|analytic|, |numeric|, eps)`.
pub fn finite_difference_check<T, F>(
    mut loss_fn: F,
    params: &Tensor<T>,
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<f64>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> Result<(f64, Tensor<T>)>,
{
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::Data(format!("non-finite loss {loss}")));
    }
    same_shape(analytic.shape(), params.shape())?;
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for &i in coords {
        let orig = probe.data()[i];
        let up = orig + T::from_f64(eps);
        let down = orig - T::from_f64(eps);
        probe.data_mut()[i] = up;
        let hi = loss_fn(&probe)?.0;
        probe.data_mut()[i] = down;
        let lo = loss_fn(&probe)?.0;
        probe.data_mut()[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Data(format!(
                "non-finite loss probing coordinate {i}"
            )));
        }
        // divide by the step actually taken after rounding to T
        let numeric = (hi - lo) / (up - down).to_f64();
        let a = analytic.data()[i].to_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(eps);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Worst relative error of one layer type over a batch of random instances.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub layer: String,
    pub instances: usize,
    pub max_rel_error: f64,
}

type Loss = (f64, Vec<Tensor<f64>>);

/// Checks every argument of `f` in turn, holding the others fixed.
fn check_all_args(
    f: impl Fn(&[Tensor<f64>]) -> Result<Loss>,
    args: &[Tensor<f64>],
    eps: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..args.len() {
        let err = finite_difference_check(
            |probe: &Tensor<f64>| {
                let mut a = args.to_vec();
                a[k] = probe.clone();
                let (loss, mut grads) = f(&a)?;
                Ok((loss, grads.swap_remove(k)))
            },
            &args[k],
            eps,
            None,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// `sum_i w_i y_i` and its gradient `w`.
fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> (f64, Tensor<f64>) {
    let loss = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    (loss, w.clone())
}

fn gaussian(rng: &mut RngState, shape: Vec<usize>, std: f64) -> Tensor<f64> {
    init_gaussian(rng, shape, 0.0, std).expect("valid std")
}

fn conv_case(rng: &mut RngState, k: usize, eps: f64) -> Result<f64> {
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let side = rng.random_range(k.max(3)..=6);
    let stride = rng.random_range(1..=2);
    let pad = k / 2;
    let args = vec![
        gaussian(rng, vec![2, cin, side, side], 1.0),
        gaussian(rng, vec![cout, cin, k, k], 0.5),
        gaussian(rng, vec![cout], 0.5),
    ];
    let probe = Conv2dParams::new(args[1].clone(), args[2].clone(), (pad, pad), stride)?;
    let out_shape = conv2d(&probe, &args[0])?.shape().to_vec();
    let w = gaussian(rng, out_shape, 1.0);
    check_all_args(
        |a| {
            let p = Conv2dParams::new(a[1].clone(), a[2].clone(), (pad, pad), stride)?;
            let y = conv2d(&p, &a[0])?;
            let (loss, gy) = weighted_sum(&y, &w);
            let g = conv2d_backward(&p, &a[0], &gy)?;
            Ok((loss, vec![g.input, g.kernel, g.bias]))
        },
        &args,
        eps,
    )
}

fn dense_case(rng: &mut RngState, eps: f64) -> Result<f64> {
    let (din, dout, n) = (
        rng.random_range(1..=8),
        rng.random_range(1..=6),
        rng.random_range(1..=3),
    );
    let args = vec![
        gaussian(rng, vec![n, din], 1.0),
        gaussian(rng, vec![dout, din], 0.5),
        gaussian(rng, vec![dout], 0.5),
    ];
    let w = gaussian(rng, vec![n, dout], 1.0);
    check_all_args(
        |a| {
            let p = DenseParams::new(a[1].clone(), a[2].clone())?;
            let y = dense(&p, &a[0])?;
            let (loss, gy) = weighted_sum(&y, &w);
            let g = dense_backward(&p, &a[0], &gy)?;
            Ok((loss, vec![g.input, g.weight, g.bias]))
        },
        &args,
        eps,
    )
}

/// Dense followed by ReLU, with pre-activations kept away from the kink.
fn relu_case(rng: &mut RngState, eps: f64) -> Result<f64> {
    let (din, dout) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let margin = 1e4 * eps;
    let args = loop {
        let args = vec![
            gaussian(rng, vec![din], 1.0),
            gaussian(rng, vec![dout, din], 0.7),
            gaussian(rng, vec![dout], 0.7),
        ];
        let z = dense(
            &DenseParams::new(args[1].clone(), args[2].clone())?,
            &args[0],
        )?;
        if z.data().iter().all(|v| v.abs() > margin) {
            break args;
        }
    };
    let w = gaussian(rng, vec![dout], 1.0);
    check_all_args(
        |a| {
            let p = DenseParams::new(a[1].clone(), a[2].clone())?;
            let z = dense(&p, &a[0])?;
            let y = relu(&z);
            let (loss, gy) = weighted_sum(&y, &w);
            let gz = relu_backward(&z, &gy)?;
            let g = dense_backward(&p, &a[0], &gz)?;
            Ok((loss, vec![g.input, g.weight, g.bias]))
        },
        &args,
        eps,
    )
}

fn lrn_case(rng: &mut RngState, eps: f64) -> Result<f64> {
    // Paper-scale alpha barely bends the response, so half the instances use a
    // larger alpha to exercise the nonlinear term.
    let alpha = if rng.random::<bool>() { 1e-4 } else { 0.05 };
    let params = LrnParams::new(rng.random_range(1..=5), 1.0, alpha, 0.75)?;
    let c = rng.random_range(1..=8);
    let x = gaussian(rng, vec![2, c, 2, 3], 3.0);
    let w = gaussian(rng, x.shape().to_vec(), 1.0);
    check_all_args(
        |a| {
            let y = lrn(&params, &a[0])?;
            let (loss, gy) = weighted_sum(&y, &w);
            Ok((loss, vec![lrn_backward(&params, &a[0], &gy)?]))
        },
        &[x],
        eps,
    )
}

fn gap_case(rng: &mut RngState, eps: f64) -> Result<f64> {
    let shape = vec![
        2,
        rng.random_range(1..=5),
        rng.random_range(1..=5),
        rng.random_range(1..=5),
    ];
    let x = gaussian(rng, shape, 1.0);
    let w = gaussian(rng, vec![2, x.shape()[1]], 1.0);
    check_all_args(
        |a| {
            let y = global_avg_pool(&a[0])?;
            let (loss, gy) = weighted_sum(&y, &w);
            Ok((loss, vec![global_avg_pool_backward(a[0].shape(), &gy)?]))
        },
        &[x],
        eps,
    )
}

/// Inputs are a shuffled ladder with 0.05 spacing, so every window maximum is
/// separated from the runner-up by far more than `eps`.
fn maxpool_case(rng: &mut RngState, eps: f64) -> Result<f64> {
    let (c, h, w) = (
        rng.random_range(1..=3),
        rng.random_range(2..=7),
        rng.random_range(2..=7),
    );
    let mut ladder: Vec<f64> = (0..c * h * w).map(|i| i as f64 * 0.05 - 1.0).collect();
    ladder.shuffle(rng);
    let x = Tensor::new(vec![c, h, w], ladder)?;
    let out_shape = max_pool2d(&x, (2, 2), 2)?.shape().to_vec();
    let wt = gaussian(rng, out_shape, 1.0);
    check_all_args(
        |a| {
            let (y, arg) = max_pool2d_with_indices(&a[0], (2, 2), 2)?;
            let (loss, gy) = weighted_sum(&y, &wt);
            Ok((loss, vec![max_pool2d_backward(a[0].shape(), &arg, &gy)?]))
        },
        &[x],
        eps,
    )
}

fn softmax_case(rng: &mut RngState, eps: f64) -> Result<f64> {
    let (n, c) = (rng.random_range(1..=4), rng.random_range(2..=9));
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let logits = gaussian(rng, vec![n, c], 2.0);
    check_all_args(
        |a| {
            let (loss, g) = softmax_cross_entropy(&a[0], &targets)?;
            Ok((loss, vec![g]))
        },
        &[logits],
        eps,
    )
}

/// Runs `instances` random 64-bit checks for each layer type.
pub fn layer_suite(seed: u64, instances: usize, eps: f64) -> Result<Vec<GradCheckReport>> {
    type Case = fn(&mut RngState, f64) -> Result<f64>;
    let cases: [(&str, Case); 9] = [
        ("conv2d 5x5", |r, e| conv_case(r, 5, e)),
        ("conv2d 3x3", |r, e| conv_case(r, 3, e)),
        ("conv2d 1x1", |r, e| conv_case(r, 1, e)),
        ("dense", dense_case),
        ("lrn", lrn_case),
        ("global_avg_pool", gap_case),
        ("max_pool2d", maxpool_case),
        ("dense+relu", relu_case),
        ("softmax_cross_entropy", softmax_case),
    ];
    let root = RngState::new(seed);
    cases
        .iter()
        .enumerate()
        .map(|(k, (name, case))| {
            let mut rng = root.fork(k as u64);
            let mut worst = 0.0f64;
            for _ in 0..instances {
                worst = worst.max(case(&mut rng, eps)?);
            }
            Ok(GradCheckReport {
                layer: name.to_string(),
                instances,
                max_rel_error: worst,
            })
        })
        .collect()
}
