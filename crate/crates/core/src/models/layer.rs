use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, conv2d_backward, conv2d_backward_params, dense, dense_backward, dropout,
    dropout_backward, global_avg_pool, global_avg_pool_backward, lrn, lrn_backward,
    max_pool2d_backward, max_pool2d_with_indices, relu, relu_backward, Conv2dParams, DenseParams,
    LrnParams, RngState, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv(Conv2dParams),
    Dense(DenseParams),
    /// Parallel convolutions over the central `k x k` crop of the input, one
    /// per kernel size, concatenated along channels. Each branch runs without
    /// padding, so on an `s x s` patch a `k = s` branch yields the value a
    /// same-padded convolution would produce at the center pixel.
    FilterBank(Vec<Conv2dParams>),
    /// `relu(second(lrn?(relu(first(x)))) + x)`
    Residual {
        first: Conv2dParams,
        second: Conv2dParams,
        lrn: Option<LrnParams>,
    },
    Relu,
    Lrn(LrnParams),
    Dropout(f64),
    MaxPool {
        size: usize,
        stride: usize,
    },
    GlobalAvgPool,
    /// `[N, ...] -> [N, prod(...)]`
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

/// Values a layer keeps from its forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum Cache {
    Input(Tensor),
    Mask(Option<Tensor>),
    Pool {
        shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Shape(Vec<usize>),
    Bank {
        crops: Vec<Tensor>,
        shape: Vec<usize>,
    },
    Residual {
        x: Tensor,
        c1: Tensor,
        r1: Tensor,
        normed: Option<Tensor>,
        sum: Tensor,
    },
}

fn crop_center(input: &Tensor, k: usize) -> Result<Tensor> {
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if k > h || k > w {
        return Err(Error::dim(format!("kernel {k} exceeds {h}x{w} input")));
    }
    if k == h && k == w {
        return Ok(input.clone());
    }
    let (oy, ox) = ((h - k) / 2, (w - k) / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * k * k);
    for plane in 0..n * c {
        for y in 0..k {
            let row = plane * h * w + (oy + y) * w + ox;
            out.extend_from_slice(&x[row..row + k]);
        }
    }
    Tensor::new(vec![n, c, k, k], out)
}

fn uncrop_center(grad: &Tensor, shape: &[usize], into: &mut Tensor) {
    let (h, w) = (shape[2], shape[3]);
    let k = grad.shape()[2];
    let (oy, ox) = ((h - k) / 2, (w - k) / 2);
    let dst = into.data_mut();
    for (plane, src) in grad.data().chunks(k * k).enumerate() {
        for y in 0..k {
            let row = plane * h * w + (oy + y) * w + ox;
            for x in 0..k {
                dst[row + x] += src[y * k + x];
            }
        }
    }
}

/// Concatenates `[N, C_i, H, W]` tensors along channels.
fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let s0 = parts[0].shape();
    let (n, hw) = (s0[0], s0[2] * s0[3]);
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(n * total * hw);
    for i in 0..n {
        for p in parts {
            let per = p.shape()[1] * hw;
            out.extend_from_slice(&p.data()[i * per..][..per]);
        }
    }
    Tensor::new(vec![n, total, s0[2], s0[3]], out)
}

fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let s = grad.shape();
    let (n, total, hw) = (s[0], s[1], s[2] * s[3]);
    let mut parts: Vec<Vec<f32>> = channels
        .iter()
        .map(|c| Vec::with_capacity(n * c * hw))
        .collect();
    for i in 0..n {
        let mut offset = i * total * hw;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[offset..offset + c * hw]);
            offset += c * hw;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::new(vec![n, c, s[2], s[3]], d))
        .collect()
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match &self.kind {
            LayerKind::Conv(p) => vec![&p.kernel, &p.bias],
            LayerKind::Dense(p) => vec![&p.weight, &p.bias],
            LayerKind::FilterBank(bs) => bs.iter().flat_map(|p| [&p.kernel, &p.bias]).collect(),
            LayerKind::Residual { first, second, .. } => {
                vec![&first.kernel, &first.bias, &second.kernel, &second.bias]
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.kind {
            LayerKind::Conv(p) => vec![&mut p.kernel, &mut p.bias],
            LayerKind::Dense(p) => vec![&mut p.weight, &mut p.bias],
            LayerKind::FilterBank(bs) => bs
                .iter_mut()
                .flat_map(|p| [&mut p.kernel, &mut p.bias])
                .collect(),
            LayerKind::Residual { first, second, .. } => vec![
                &mut first.kernel,
                &mut first.bias,
                &mut second.kernel,
                &mut second.bias,
            ],
            _ => Vec::new(),
        }
    }

    /// Number of weighted processing layers this layer accounts for.
    pub fn weighted_depth(&self) -> usize {
        match self.kind {
            LayerKind::Conv(_) | LayerKind::Dense(_) | LayerKind::FilterBank(_) => 1,
            LayerKind::Residual { .. } => 2,
            _ => 0,
        }
    }

    /// `rng` is only drawn from by dropout in training mode.
    pub(crate) fn forward(
        &self,
        input: &Tensor,
        training: bool,
        rng: Option<&mut RngState>,
    ) -> Result<(Tensor, Cache)> {
        Ok(match &self.kind {
            LayerKind::Conv(p) => (conv2d(p, input)?, Cache::Input(input.clone())),
            LayerKind::Dense(p) => (dense(p, input)?, Cache::Input(input.clone())),
            LayerKind::Relu => (relu(input), Cache::Input(input.clone())),
            LayerKind::Lrn(p) => (lrn(p, input)?, Cache::Input(input.clone())),
            LayerKind::GlobalAvgPool => (global_avg_pool(input)?, Cache::Input(input.clone())),
            LayerKind::Dropout(rate) => {
                let dropped = match (training, rng) {
                    (true, Some(rng)) => dropout(rng, *rate, input, true)?,
                    (true, None) => {
                        return Err(Error::param("training-mode dropout needs an RngState"))
                    }
                    (false, _) => dropout(&mut RngState::new(0), *rate, input, false)?,
                };
                (dropped.output, Cache::Mask(dropped.mask))
            }
            LayerKind::MaxPool { size, stride } => {
                let (out, argmax) = max_pool2d_with_indices(input, (*size, *size), *stride)?;
                (
                    out,
                    Cache::Pool {
                        shape: input.shape().to_vec(),
                        argmax,
                    },
                )
            }
            LayerKind::Flatten => {
                let n = input.shape()[0];
                let rest = input.len() / n;
                (
                    input.clone().reshape(vec![n, rest])?,
                    Cache::Shape(input.shape().to_vec()),
                )
            }
            LayerKind::FilterBank(branches) => {
                if input.rank() != 4 {
                    return Err(Error::dim("filter bank expects [N, C, H, W]"));
                }
                let mut crops = Vec::with_capacity(branches.len());
                let mut outs = Vec::with_capacity(branches.len());
                for p in branches {
                    let crop = crop_center(input, p.kernel_size().0)?;
                    outs.push(conv2d(p, &crop)?);
                    crops.push(crop);
                }
                (
                    concat_channels(&outs)?,
                    Cache::Bank {
                        crops,
                        shape: input.shape().to_vec(),
                    },
                )
            }
            LayerKind::Residual {
                first,
                second,
                lrn: norm,
            } => {
                let c1 = conv2d(first, input)?;
                let r1 = relu(&c1);
                let normed = norm.as_ref().map(|p| lrn(p, &r1)).transpose()?;
                let c2 = conv2d(second, normed.as_ref().unwrap_or(&r1))?;
                let sum = add(&c2, input)?;
                (
                    relu(&sum),
                    Cache::Residual {
                        x: input.clone(),
                        c1,
                        r1,
                        normed,
                        sum,
                    },
                )
            }
        })
    }

    /// Returns `(input gradient, parameter gradients in params() order)`.
    /// Convolutional layers skip the input gradient when `need_input` is
    /// false and return an empty tensor in its place.
    pub(crate) fn backward(
        &self,
        cache: &Cache,
        grad: &Tensor,
        need_input: bool,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let mismatch = || Error::dim(format!("layer '{}' got a foreign cache", self.name));
        Ok(match (&self.kind, cache) {
            (LayerKind::Conv(p), Cache::Input(x)) if !need_input => {
                let (k, b) = conv2d_backward_params(p, x, grad)?;
                (Tensor::zeros(vec![1]), vec![k, b])
            }
            (LayerKind::Conv(p), Cache::Input(x)) => {
                let g = conv2d_backward(p, x, grad)?;
                (g.input, vec![g.kernel, g.bias])
            }
            (LayerKind::Dense(p), Cache::Input(x)) => {
                let g = dense_backward(p, x, grad)?;
                (g.input, vec![g.weight, g.bias])
            }
            (LayerKind::Relu, Cache::Input(x)) => (relu_backward(x, grad)?, vec![]),
            (LayerKind::Lrn(p), Cache::Input(x)) => (lrn_backward(p, x, grad)?, vec![]),
            (LayerKind::GlobalAvgPool, Cache::Input(x)) => {
                (global_avg_pool_backward(x.shape(), grad)?, vec![])
            }
            (LayerKind::Dropout(_), Cache::Mask(m)) => {
                (dropout_backward(m.as_ref(), grad)?, vec![])
            }
            (LayerKind::MaxPool { .. }, Cache::Pool { shape, argmax }) => {
                (max_pool2d_backward(shape, argmax, grad)?, vec![])
            }
            (LayerKind::Flatten, Cache::Shape(shape)) => {
                (grad.clone().reshape(shape.clone())?, vec![])
            }
            (LayerKind::FilterBank(branches), Cache::Bank { crops, shape }) => {
                let channels: Vec<usize> = branches.iter().map(|p| p.out_channels()).collect();
                let parts = split_channels(grad, &channels)?;
                let mut gx = Tensor::zeros(shape.clone());
                let mut grads = Vec::with_capacity(2 * branches.len());
                for ((p, crop), g) in branches.iter().zip(crops).zip(&parts) {
                    if need_input {
                        let gb = conv2d_backward(p, crop, g)?;
                        uncrop_center(&gb.input, shape, &mut gx);
                        grads.extend([gb.kernel, gb.bias]);
                    } else {
                        let (k, b) = conv2d_backward_params(p, crop, g)?;
                        grads.extend([k, b]);
                    }
                }
                (gx, grads)
            }
            (
                LayerKind::Residual {
                    first,
                    second,
                    lrn: norm,
                },
                Cache::Residual {
                    x,
                    c1,
                    r1,
                    normed,
                    sum,
                },
            ) => {
                let gs = relu_backward(sum, grad)?;
                let g2 = conv2d_backward(second, normed.as_ref().unwrap_or(r1), &gs)?;
                let gr1 = match norm {
                    Some(p) => lrn_backward(p, r1, &g2.input)?,
                    None => g2.input,
                };
                let gc1 = relu_backward(c1, &gr1)?;
                let g1 = conv2d_backward(first, x, &gc1)?;
                (
                    add(&g1.input, &gs)?,
                    vec![g1.kernel, g1.bias, g2.kernel, g2.bias],
                )
            }
            _ => return Err(mismatch()),
        })
    }
}
