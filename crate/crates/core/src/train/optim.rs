use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nets::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 0.0005,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn check_grads<T: Scalar>(params: &ParamStore<T>) -> Result<(), TrainError> {
    for (name, p) in params.iter() {
        if p.kind.trainable() && p.grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::Gradient(format!("non-finite gradient in {name}")));
        }
    }
    Ok(())
}

/// `p <- p - lr * (grad + wd * p)`; decay applies to weights only.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, lr: f64, weight_decay: f64) -> Result<(), TrainError> {
    check_grads(params)?;
    let (lr, wd) = (T::of(lr), T::of(weight_decay));
    for (_, p) in params.iter_mut() {
        if !p.kind.trainable() {
            continue;
        }
        let decay = p.kind.decays();
        for (v, &g) in p.value.iter_mut().zip(&p.grad) {
            let step = if decay { g + wd * *v } else { g };
            *v = *v - lr * step;
        }
    }
    Ok(())
}

/// First and second moment estimates for every trainable entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Advances `t` and applies one bias-corrected update.
    pub fn step(&mut self, params: &mut ParamStore<T>, cfg: &AdamConfig) -> Result<(), TrainError> {
        self.t += 1;
        adam_step(params, &mut self.m, &mut self.v, cfg, self.t)
    }
}

/// Standard Adam at step `t >= 1` with explicit moment buffers.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    m: &mut [Vec<T>],
    v: &mut [Vec<T>],
    cfg: &AdamConfig,
    t: u64,
) -> Result<(), TrainError> {
    if t < 1 {
        return Err(TrainError::Config("Adam step counter must be >= 1".into()));
    }
    check_grads(params)?;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let one = T::one();
    let c1 = T::of(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::of(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for ((_, p), (m, v)) in params.iter_mut().zip(m.iter_mut().zip(v.iter_mut())) {
        if !p.kind.trainable() {
            continue;
        }
        for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
