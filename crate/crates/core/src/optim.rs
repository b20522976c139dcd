//! AdamW with decoupled weight decay, linear-warmup cosine schedule and
//! global-norm gradient clipping, all over flat parameter vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("step {step} outside the schedule [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("parameter/gradient length mismatch: {params} vs {grads}")]
    Length { params: usize, grads: usize },
}

fn default_warmup() -> usize {
    200
}
fn default_floor() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub peak_lr: f64,
    #[serde(default = "default_floor")]
    pub floor_fraction: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.floor_fraction > 0.0 && self.floor_fraction <= 1.0) {
            return Err(OptimError::InvalidSchedule(format!(
                "floor_fraction {} not in (0, 1]",
                self.floor_fraction
            )));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(OptimError::InvalidSchedule(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(OptimError::InvalidSchedule(format!(
                "peak_lr {} must be positive",
                self.peak_lr
            )));
        }
        Ok(())
    }
}

/// Linear ramp from 0 to peak over the warmup, then cosine decay to
/// `floor_fraction * peak` at `total_steps`.
pub fn lr_at(step: usize, config: &ScheduleConfig) -> Result<f64, OptimError> {
    if step > config.total_steps {
        return Err(OptimError::StepOutOfRange {
            step,
            total: config.total_steps,
        });
    }
    let peak = config.peak_lr;
    if step < config.warmup_steps {
        return Ok(peak * step as f64 / config.warmup_steps as f64);
    }
    let span = (config.total_steps - config.warmup_steps).max(1) as f64;
    let progress = (step - config.warmup_steps) as f64 / span;
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    let floor = config.floor_fraction;
    Ok(peak * (floor + (1.0 - floor) * cosine))
}

/// Rescales `grads` so its L2 norm is at most `max_norm`; 0 disables.
pub fn clip_global_norm(grads: &[f64], max_norm: f64) -> Vec<f64> {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        grads.iter().map(|g| g * scale).collect()
    } else {
        grads.to_vec()
    }
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_clip() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Global-norm clip applied to parameter gradients; 0 disables.
    #[serde(default = "default_clip")]
    pub max_grad_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
            max_grad_norm: default_clip(),
        }
    }
}

/// Moment accumulators and step count for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    pub config: AdamWConfig,
}

impl OptimState {
    pub fn new(num_params: usize, config: AdamWConfig) -> Self {
        Self {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            config,
        }
    }
}

/// One AdamW update in place: decay `params` by `lr * weight_decay`, then
/// apply the bias-corrected moment step.
pub fn optimizer_step(params: &mut [f64], grads: &[f64], state: &mut OptimState, lr: f64) -> Result<(), OptimError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(OptimError::Length {
            params: params.len(),
            grads: grads.len(),
        });
    }
    let c = &state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * c.weight_decay * params[i];
        params[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
    }
    Ok(())
}
