//! AdamW with decoupled weight decay and a warmup + cosine learning-rate
//! schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::EncoderParams;

/// Linear warmup to `base_lr` over `warmup_steps`, then half-cosine decay
/// reaching zero at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64, warmup_steps: u64) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return base_lr;
    }
    let progress = (step - warmup_steps) as f64 / span as f64;
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update on a flat tensor. `t` is the 1-based step count used for
/// bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamWConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        param[i] -= lr * weight_decay * param[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Optimizer state: moment estimates shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: EncoderParams,
    v: EncoderParams,
    step: u64,
}

impl AdamW {
    pub fn new(params: &EncoderParams, cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Weight decay only touches weight matrices; biases,
    /// the embedding table and the temperature are never decayed.
    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64, weight_decay: f64) -> Result<()> {
        for g in grads.tensors() {
            if g.data.iter().any(|x| !x.is_finite()) {
                let max_abs = g.data.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                return Err(Error::NonFiniteGradient {
                    step: self.step + 1,
                    param: g.name.to_string(),
                    max_abs,
                });
            }
        }
        self.step += 1;
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            debug_assert_eq!(p.name, g.name);
            let wd = if p.kind.decays() { weight_decay } else { 0.0 };
            adamw_update(p.data, g.data, m.data, v.data, self.step, lr, wd, &self.cfg);
        }
        Ok(())
    }
}
