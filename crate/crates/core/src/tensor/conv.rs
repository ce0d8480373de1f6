use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{batched_shape, same_shape, split_batch, Real, Tensor};
use crate::error::{Error, Result};

/// 2-D convolution (cross-correlation) with zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams<T = f32> {
    /// `[out_channels, in_channels, kh, kw]`
    pub kernel: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
    pub padding: (usize, usize),
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    /// 1x1 kernel, stride 1, no padding: columns are plain channel planes.
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.ph == 0 && self.pw == 0 && self.stride == 1
    }
}

impl<T: Real> Conv2dParams<T> {
    pub fn new(
        kernel: Tensor<T>,
        bias: Tensor<T>,
        padding: (usize, usize),
        stride: usize,
    ) -> Result<Self> {
        if kernel.rank() != 4 {
            return Err(Error::dim(format!(
                "conv kernel must be [out, in, kh, kw], got {:?}",
                kernel.shape()
            )));
        }
        if bias.shape() != [kernel.shape()[0]] {
            return Err(Error::dim(format!(
                "conv bias shape {:?} does not match {} filters",
                bias.shape(),
                kernel.shape()[0]
            )));
        }
        if stride == 0 {
            return Err(Error::param("conv stride must be positive"));
        }
        Ok(Self {
            kernel,
            bias,
            padding,
            stride,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }

    /// Spatial output extent for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = self.padding;
        let (eh, ew) = (h + 2 * ph, w + 2 * pw);
        if eh < kh || ew < kw {
            return Err(Error::dim(format!(
                "padded input {eh}x{ew} smaller than kernel {kh}x{kw}"
            )));
        }
        Ok(((eh - kh) / self.stride + 1, (ew - kw) / self.stride + 1))
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry> {
        let (batch, sample) = split_batch(input, 3)?;
        let (cin, h, w) = (sample[0], sample[1], sample[2]);
        if cin != self.in_channels() {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {cin}",
                self.in_channels()
            )));
        }
        let (ho, wo) = self.output_size(h, w)?;
        let (kh, kw) = self.kernel_size();
        Ok(Geometry {
            batch,
            cin,
            h,
            w,
            cout: self.out_channels(),
            kh,
            kw,
            ph: self.padding.0,
            pw: self.padding.1,
            stride: self.stride,
            ho,
            wo,
        })
    }
}

/// Input pixel feeding output position `(oy, ox)` at kernel tap `(ky, kx)`,
/// or `None` when it falls in the zero padding.
#[inline]
fn source(g: &Geometry, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
    let y = (oy * g.stride + ky).checked_sub(g.ph)?;
    let x = (ox * g.stride + kx).checked_sub(g.pw)?;
    (y < g.h && x < g.w).then_some((y, x))
}

/// Column matrix `[cin*kh*kw, batch*ho*wo]`.
fn im2col<T: Real>(g: &Geometry, input: &[T]) -> Vec<T> {
    let p = g.positions();
    let hw = g.ho * g.wo;
    let plane = g.h * g.w;
    if g.pointwise() {
        let mut cols = Vec::with_capacity(g.cin * p);
        for c in 0..g.cin {
            for n in 0..g.batch {
                cols.extend_from_slice(&input[(n * g.cin + c) * plane..][..plane]);
            }
        }
        return cols;
    }
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for n in 0..g.batch {
        for c in 0..g.cin {
            let src = &input[(n * g.cin + c) * plane..][..plane];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = (c * g.kh + ky) * g.kw + kx;
                    let dst = &mut cols[row * p + n * hw..][..hw];
                    for oy in 0..g.ho {
                        for ox in 0..g.wo {
                            if let Some((y, x)) = source(g, oy, ox, ky, kx) {
                                dst[oy * g.wo + ox] = src[y * g.w + x];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(g: &Geometry, cols: &[T], out: &mut [T]) {
    let p = g.positions();
    let plane = g.h * g.w;
    if g.pointwise() {
        for c in 0..g.cin {
            for n in 0..g.batch {
                let src = &cols[c * p + n * plane..][..plane];
                out[(n * g.cin + c) * plane..][..plane].copy_from_slice(src);
            }
        }
        return;
    }
    for n in 0..g.batch {
        for c in 0..g.cin {
            let dst = &mut out[(n * g.cin + c) * plane..][..plane];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = (c * g.kh + ky) * g.kw + kx;
                    let src = &cols[row * p + n * g.ho * g.wo..][..g.ho * g.wo];
                    for oy in 0..g.ho {
                        for ox in 0..g.wo {
                            if let Some((y, x)) = source(g, oy, ox, ky, kx) {
                                dst[y * g.w + x] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution over `[C, H, W]` or `[N, C, H, W]`.
pub fn conv2d<T: Real>(params: &Conv2dParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let g = params.geometry(input.shape())?;
    let cols = im2col(&g, input.data());
    let (k, p) = (g.patch_len(), g.positions());
    let weights = ArrayView2::from_shape((g.cout, k), params.kernel.data()).expect("kernel layout");
    let cols = ArrayView2::from_shape((k, p), &cols).expect("column layout");
    let mut prod = vec![T::zero(); g.cout * p];
    general_mat_mul(
        T::one(),
        &weights,
        &cols,
        T::zero(),
        &mut ArrayViewMut2::from_shape((g.cout, p), &mut prod).expect("output layout"),
    );

    let hw = g.ho * g.wo;
    let mut out = vec![T::zero(); g.batch * g.cout * hw];
    for n in 0..g.batch {
        for o in 0..g.cout {
            let b = params.bias.data()[o];
            let src = &prod[o * p + n * hw..][..hw];
            let dst = &mut out[(n * g.cout + o) * hw..][..hw];
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + b);
        }
    }
    Tensor::new(batched_shape(input.shape(), 3, &[g.cout, g.ho, g.wo]), out)
}

/// Gradients with respect to kernel, bias, and input.
pub fn conv2d_backward<T: Real>(
    params: &Conv2dParams<T>,
    input: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let (kernel, bias, grad_input) = backward(params, input, grad_output, true)?;
    Ok(Conv2dGrads {
        kernel,
        bias,
        input: grad_input.expect("input gradient requested"),
    })
}

/// Kernel and bias gradients only, skipping the input gradient.
pub fn conv2d_backward_params<T: Real>(
    params: &Conv2dParams<T>,
    input: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (kernel, bias, _) = backward(params, input, grad_output, false)?;
    Ok((kernel, bias))
}

type Backward<T> = (Tensor<T>, Tensor<T>, Option<Tensor<T>>);

fn backward<T: Real>(
    params: &Conv2dParams<T>,
    input: &Tensor<T>,
    grad_output: &Tensor<T>,
    want_input: bool,
) -> Result<Backward<T>> {
    let g = params.geometry(input.shape())?;
    same_shape(
        grad_output.shape(),
        &batched_shape(input.shape(), 3, &[g.cout, g.ho, g.wo]),
    )?;
    let (k, p, hw) = (g.patch_len(), g.positions(), g.ho * g.wo);

    // grad_output rearranged to [cout, batch*ho*wo]
    let mut go = vec![T::zero(); g.cout * p];
    let mut grad_bias = vec![T::zero(); g.cout];
    for n in 0..g.batch {
        for o in 0..g.cout {
            let src = &grad_output.data()[(n * g.cout + o) * hw..][..hw];
            go[o * p + n * hw..][..hw].copy_from_slice(src);
            grad_bias[o] += src.iter().copied().sum::<T>();
        }
    }
    let go = ArrayView2::from_shape((g.cout, p), &go).expect("grad layout");

    let cols = im2col(&g, input.data());
    let cols = ArrayView2::from_shape((k, p), &cols).expect("column layout");
    let mut grad_kernel = vec![T::zero(); g.cout * k];
    general_mat_mul(
        T::one(),
        &go,
        &cols.t(),
        T::zero(),
        &mut ArrayViewMut2::from_shape((g.cout, k), &mut grad_kernel).expect("kernel layout"),
    );

    let kernel = Tensor::new(params.kernel.shape(), grad_kernel)?;
    let bias = Tensor::new(vec![g.cout], grad_bias)?;
    if !want_input {
        return Ok((kernel, bias, None));
    }

    let weights = ArrayView2::from_shape((g.cout, k), params.kernel.data()).expect("kernel layout");
    let mut grad_cols = vec![T::zero(); k * p];
    general_mat_mul(
        T::one(),
        &weights.t(),
        &go,
        T::zero(),
        &mut ArrayViewMut2::from_shape((k, p), &mut grad_cols).expect("column layout"),
    );
    let mut grad_input = vec![T::zero(); input.len()];
    col2im(&g, &grad_cols, &mut grad_input);
    Ok((kernel, bias, Some(Tensor::new(input.shape(), grad_input)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{init_gaussian, RngState};

    /// Direct quadruple loop over output position and receptive field.
    fn naive_conv(params: &Conv2dParams<f64>, input: &Tensor<f64>) -> Tensor<f64> {
        let s = input.shape();
        let (cin, h, w) = (s[0], s[1], s[2]);
        let (kh, kw) = params.kernel_size();
        let (ph, pw) = params.padding;
        let st = params.stride;
        let ho = (h + 2 * ph - kh) / st + 1;
        let wo = (w + 2 * pw - kw) / st + 1;
        let cout = params.out_channels();
        let mut out = Tensor::zeros(vec![cout, ho, wo]);
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = params.bias.data()[o];
                    for c in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * st + ky) as isize - ph as isize;
                                let x = (ox * st + kx) as isize - pw as isize;
                                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                    acc += params.kernel.get(&[o, c, ky, kx])
                                        * input.get(&[c, y as usize, x as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[o, oy, ox], acc);
                }
            }
        }
        out
    }

    fn random_params(
        rng: &mut RngState,
        cout: usize,
        cin: usize,
        k: usize,
        pad: usize,
        stride: usize,
    ) -> Conv2dParams<f64> {
        Conv2dParams::new(
            init_gaussian(rng, vec![cout, cin, k, k], 0.0, 1.0).unwrap(),
            init_gaussian(rng, vec![cout], 0.0, 1.0).unwrap(),
            (pad, pad),
            stride,
        )
        .unwrap()
    }

    #[test]
    fn parameter_only_backward() {
        let mut rng = RngState::new(12);
        let p = Conv2dParams::new(
            init_gaussian::<f64>(&mut rng, vec![3, 2, 3, 3], 0.0, 1.0).unwrap(),
            init_gaussian(&mut rng, vec![3], 0.0, 1.0).unwrap(),
            (1, 1),
            1,
        )
        .unwrap();
        let x = init_gaussian(&mut rng, vec![2, 2, 4, 4], 0.0, 1.0).unwrap();
        let g = init_gaussian(&mut rng, vec![2, 3, 4, 4], 0.0, 1.0).unwrap();
        let full = conv2d_backward(&p, &x, &g).unwrap();
        let (k, b) = conv2d_backward_params(&p, &x, &g).unwrap();
        assert_eq!((k, b), (full.kernel, full.bias));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let params = Conv2dParams::new(
            Tensor::<f32>::full(vec![1, 1, 1, 1], 1.0),
            Tensor::zeros(vec![1]),
            (0, 0),
            1,
        )
        .unwrap();
        let x = Tensor::from_fn(vec![1, 3, 4], |i| i as f32 - 5.0);
        assert_eq!(conv2d(&params, &x).unwrap(), x);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = RngState::new(42);
        let params = random_params(&mut rng, 2, 3, 3, 1, 1);
        let x = init_gaussian(&mut rng, vec![3, 4, 4], 0.0, 1.0).unwrap();
        let fast = conv2d(&params, &x).unwrap();
        let slow = naive_conv(&params, &x);
        assert_eq!(fast.shape(), &[2, 4, 4]);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn strided_batch_matches_per_sample() {
        let mut rng = RngState::new(8);
        let params = random_params(&mut rng, 4, 2, 3, 2, 2);
        let x = init_gaussian(&mut rng, vec![3, 2, 7, 6], 0.0, 1.0).unwrap();
        let batched = conv2d(&params, &x).unwrap();
        let per = 2 * 7 * 6;
        let out_per = batched.len() / 3;
        for n in 0..3 {
            let xs = Tensor::new(vec![2, 7, 6], x.data()[n * per..][..per].to_vec()).unwrap();
            let slow = naive_conv(&params, &xs);
            let got = &batched.data()[n * out_per..][..out_per];
            for (a, b) in got.iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = RngState::new(1);
        let params = random_params(&mut rng, 2, 3, 5, 0, 1);
        let wrong_channels = Tensor::zeros(vec![2, 6, 6]);
        assert!(matches!(
            conv2d(&params, &wrong_channels),
            Err(Error::Dimension(_))
        ));
        let too_small = Tensor::zeros(vec![3, 4, 4]);
        assert!(matches!(
            conv2d(&params, &too_small),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn linear_in_input_without_bias() {
        let mut rng = RngState::new(3);
        let mut params = random_params(&mut rng, 3, 2, 3, 1, 1);
        params.bias.fill(0.0);
        let x = init_gaussian(&mut rng, vec![2, 5, 5], 0.0, 1.0).unwrap();
        let y = init_gaussian(&mut rng, vec![2, 5, 5], 0.0, 1.0).unwrap();
        let (a, b) = (0.7, -1.3);
        let mix = Tensor::new(
            vec![2, 5, 5],
            x.data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| a * p + b * q)
                .collect(),
        )
        .unwrap();
        let lhs = conv2d(&params, &mix).unwrap();
        let cx = conv2d(&params, &x).unwrap();
        let cy = conv2d(&params, &y).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            assert!((l - (a * p + b * q)).abs() < 1e-6);
        }
    }
}
