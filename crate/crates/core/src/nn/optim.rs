use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::param::{ParamStore, Parameter};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize], cfg: AdamConfig) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            beta1: T::c(cfg.beta1),
            beta2: T::c(cfg.beta2),
            epsilon: T::c(cfg.epsilon),
        }
    }

    /// One bias-corrected Adam update of `param` from `param.grad`.
    ///
    /// A non-finite gradient leaves both the parameter and the state
    /// untouched and reports divergence.
    pub fn step(&mut self, param: &mut Parameter<T>, lr: T) -> Result<()> {
        if param.grad.shape() != self.m.shape() || param.value.shape() != self.m.shape() {
            return Err(Error::Shape(format!("adam state does not match `{}`", param.name)));
        }
        if let Some(bad) = param.grad.data().iter().find(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("gradient of `{}` contains {bad}", param.name)));
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let values = param.value.data_mut();
        let grads = param.grad.data();
        let (m, v) = (self.m.data_mut(), self.v.data_mut());
        for k in 0..values.len() {
            let g = grads[k];
            m[k] = b1 * m[k] + (T::one() - b1) * g;
            v[k] = b2 * v[k] + (T::one() - b2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            values[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam over every parameter of a store.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        Adam { states: store.iter().map(|(_, p)| AdamState::new(p.value.shape(), cfg)).collect() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: T) -> Result<()> {
        // Check everything first so a divergent step mutates nothing.
        for p in store.params_mut().iter() {
            if p.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient in `{}`", p.name)));
            }
        }
        for (state, p) in self.states.iter_mut().zip(store.params_mut()) {
            state.step(p, lr)?;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }
}

/// Staircase inverse-time decay: `lr0 / (1 + rate · ⌊step / decay_steps⌋)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay_steps: u64,
    pub decay_rate: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { lr0: 0.001, decay_steps: 100, decay_rate: 0.5 }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || self.decay_steps == 0 || !(self.decay_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr0 / (1.0 + self.decay_rate * (step / self.decay_steps) as f64)
    }
}
