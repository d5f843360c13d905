//! AdamW with decoupled weight decay, linear warmup into cosine decay, the
//! linear lr scaling rule and layer-wise lr decay.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Batch size at which `base_lr` applies unscaled.
pub const REFERENCE_BATCH: f64 = 256.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub batch_size: usize,
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub layer_decay: f64,
    pub min_lr: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 5e-4,
            weight_decay: 0.05,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch_size: 32,
            warmup_lr: 1e-6,
            warmup_epochs: 5,
            total_epochs: 100,
            layer_decay: 0.75,
            min_lr: 0.0,
        }
    }
}

impl OptimConfig {
    /// Batch size used for localization-style runs.
    pub const LOCALIZATION_BATCH: usize = 8;

    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.layer_decay > 0.0 && self.layer_decay <= 1.0) {
            return Err(Error::Config(format!(
                "layer_decay must lie in (0, 1], got {}",
                self.layer_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.base_lr < 0.0 || self.warmup_lr < 0.0 || self.min_lr < 0.0 {
            return Err(Error::Config("learning rates must be non-negative and eps positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// `base_lr · batch_size / 256`.
pub fn scaled_base_lr(cfg: &OptimConfig) -> f64 {
    cfg.base_lr * cfg.batch_size as f64 / REFERENCE_BATCH
}

/// Learning rate at a (possibly fractional) step position.
///
/// Linear from `warmup_lr` to the scaled peak over the warmup steps, then
/// half-cosine from the peak to `min_lr`; clamps to `min_lr` past the end.
pub fn lr_at_position(step: f64, steps_per_epoch: usize, cfg: &OptimConfig) -> f64 {
    let peak = scaled_base_lr(cfg);
    let warmup = (cfg.warmup_epochs * steps_per_epoch) as f64;
    let total = (cfg.total_epochs * steps_per_epoch) as f64;
    if step < warmup {
        return cfg.warmup_lr + (peak - cfg.warmup_lr) * step / warmup;
    }
    let span = total - warmup;
    if span <= 0.0 {
        return peak;
    }
    let progress = ((step - warmup) / span).clamp(0.0, 1.0);
    cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1.0 + (PI * progress).cos())
}

pub fn lr_at(step: u64, steps_per_epoch: usize, cfg: &OptimConfig) -> f64 {
    lr_at_position(step as f64, steps_per_epoch, cfg)
}

/// `decay^(num_layers − layer_index)`; heads sit at `num_layers`.
pub fn layer_lr_scale(layer_index: usize, num_layers: usize, decay: f64) -> f64 {
    let exponent = num_layers.saturating_sub(layer_index);
    decay.powi(exponent as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One AdamW update of a flat tensor. `t` is the step count after increment.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    weight_decay: f64,
    betas: (f64, f64),
    eps: f64,
) {
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (((p, &g), mi), vi) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (1.0 - b1) * g;
        *vi = b2 * *vi + (1.0 - b2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
    }
}

/// Applies AdamW to every tensor; the per-tensor lr is `lr · layer_lr_scale`.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamWState,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    if grad_tensors.len() != state.m.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    for g in &grad_tensors {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient `{}`", g.name),
                clip_id: "<batch>".into(),
            });
        }
    }
    let num_layers = params.config.depth;
    state.t += 1;
    let t = state.t;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&grad_tensors)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.data.len() != g.data.len() || m.len() != g.data.len() {
            return Err(Error::Shape(format!("gradient `{}` has the wrong size", g.name)));
        }
        let group_lr = lr * layer_lr_scale(p.layer, num_layers, cfg.layer_decay);
        adamw_update(p.data, g.data, m, v, t, group_lr, cfg.weight_decay, cfg.betas, cfg.eps);
    }
    Ok(())
}
