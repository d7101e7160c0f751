use indexmap::IndexMap;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moment estimates keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update; gradients are zeroed afterwards.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for (name, p) in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let m = state.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.value.shape()));
        let v = state.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.value.shape()));
        let (md, vd) = (m.data_mut(), v.data_mut());
        let g = p.grad.data();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g[i];
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    params.zero_grads();
    Ok(())
}
