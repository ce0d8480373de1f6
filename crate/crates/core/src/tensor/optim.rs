use super::{same_shape, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    SgdPlain,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd_momentum(momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
        }
    }

    pub fn sgd_plain() -> Self {
        Self {
            kind: OptimizerKind::SgdPlain,
            ..Self::sgd_momentum(0.0)
        }
    }

    pub fn adam(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            momentum: 0.0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// Per-parameter optimizer buffers. Buffers are allocated on the first step
/// and must keep matching the parameter shapes afterwards.
#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub config: OptimizerConfig,
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Momentum buffer (SGD) or first moment (Adam) of parameter `i`.
    pub fn first_moment(&self, i: usize) -> Option<&Tensor<T>> {
        self.first.get(i)
    }

    pub fn second_moment(&self, i: usize) -> Option<&Tensor<T>> {
        self.second.get(i)
    }

    /// Dispatches on the configured kind.
    pub fn update(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        match self.config.kind {
            OptimizerKind::SgdMomentum | OptimizerKind::SgdPlain => {
                sgd_step(self, params, grads, lr)
            }
            OptimizerKind::Adam => adam_step(self, params, grads, lr),
        }
    }

    fn prepare(
        &mut self,
        params: &[&mut Tensor<T>],
        grads: &[&Tensor<T>],
        with_second: bool,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            same_shape(p.shape(), g.shape())?;
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            if with_second {
                self.second = self.first.clone();
            }
        }
        if self.first.len() != params.len() {
            return Err(Error::dim(
                "optimizer state tracks a different parameter list",
            ));
        }
        for (b, p) in self.first.iter().zip(params) {
            same_shape(b.shape(), p.shape())?;
        }
        Ok(())
    }
}

/// `v <- m v + g; p <- p - lr v` (momentum) or `p <- p - lr g` (plain).
pub fn sgd_step<T: Real>(
    state: &mut OptimizerState<T>,
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    lr: f64,
) -> Result<()> {
    let momentum = match state.config.kind {
        OptimizerKind::SgdMomentum => T::from_f64(state.config.momentum),
        OptimizerKind::SgdPlain => T::zero(),
        OptimizerKind::Adam => return Err(Error::param("sgd_step on an Adam state")),
    };
    state.prepare(params, grads, false)?;
    let lr = T::from_f64(lr);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.first) {
        for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
    }
    state.step += 1;
    Ok(())
}

/// Adam with bias-corrected moments.
pub fn adam_step<T: Real>(
    state: &mut OptimizerState<T>,
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    lr: f64,
) -> Result<()> {
    if state.config.kind != OptimizerKind::Adam {
        return Err(Error::param("adam_step on an SGD state"));
    }
    state.prepare(params, grads, true)?;
    state.step += 1;
    let OptimizerConfig {
        beta1,
        beta2,
        epsilon,
        ..
    } = state.config;
    let t = state.step as i32;
    let c1 = T::from_f64(1.0 / (1.0 - beta1.powi(t)));
    let c2 = T::from_f64(1.0 / (1.0 - beta2.powi(t)));
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (one, eps, lr) = (T::one(), T::from_f64(epsilon), T::from_f64(lr));
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m * c1;
            let v_hat = *v * c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn plain_sgd_single_step() {
        let mut st = OptimizerState::new(OptimizerConfig::sgd_plain());
        let mut p = scalar(0.0);
        sgd_step(&mut st, &mut [&mut p], &[&scalar(1.0)], 1.0).unwrap();
        assert_eq!(p.data(), &[-1.0]);
    }

    #[test]
    fn momentum_recurrence() {
        let mut st = OptimizerState::new(OptimizerConfig::sgd_momentum(0.9));
        let mut p = scalar(0.0);
        let g = scalar(1.0);
        sgd_step(&mut st, &mut [&mut p], &[&g], 1.0).unwrap();
        assert_eq!(st.first_moment(0).unwrap().data(), &[1.0]);
        assert_eq!(p.data(), &[-1.0]);
        sgd_step(&mut st, &mut [&mut p], &[&g], 1.0).unwrap();
        assert!((st.first_moment(0).unwrap().data()[0] - 1.9).abs() < 1e-12);
        assert!((p.data()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        for config in [
            OptimizerConfig::sgd_momentum(0.9),
            OptimizerConfig::adam(0.9, 0.999, 1e-8),
        ] {
            let mut st = OptimizerState::new(config);
            let mut p = scalar(0.5);
            st.update(&mut [&mut p], &[&scalar(0.0)], 0.1).unwrap();
            assert_eq!(p.data(), &[0.5]);
        }
    }

    #[test]
    fn adam_first_step_is_lr() {
        let alpha = 1e-3;
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.9, 0.999, 1e-8));
        let mut p = scalar(0.0);
        adam_step(&mut st, &mut [&mut p], &[&scalar(1.0)], alpha).unwrap();
        let expect = -alpha / (1.0 + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_updates_bounded_by_lr() {
        let lr = 0.01;
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.9, 0.999, 1e-8));
        let mut p = scalar(0.0);
        for _ in 0..100 {
            let before = p.data()[0];
            adam_step(&mut st, &mut [&mut p], &[&scalar(0.37)], lr).unwrap();
            assert!((p.data()[0] - before).abs() <= lr * (1.0 + 1e-6));
        }
        assert_eq!(st.step, 100);
    }

    #[test]
    fn shape_and_kind_mismatch() {
        let mut st = OptimizerState::<f64>::new(OptimizerConfig::sgd_plain());
        let mut p = scalar(0.0);
        let g = Tensor::zeros(vec![2]);
        assert!(sgd_step(&mut st, &mut [&mut p], &[&g], 1.0).is_err());
        assert!(adam_step(&mut st, &mut [&mut p], &[&scalar(1.0)], 1.0).is_err());
    }
}
