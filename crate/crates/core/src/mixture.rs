//! Task-mixture mathematics: softmax mixtures, entropy, effective task count,
//! smooth worst-case aggregation, and the meta-gradient of the mixture
//! objective through a one-step probe update.
//!
//! With `p = softmax(w)`, per-task train gradients `g_i` at `θ`, the probe
//! `θ' = θ − γ Σ_j p_j g_j`, validation losses `v_i` and validation gradients
//! `h_i` at `θ'`, the objective `J_τ(v) − λ H(p)` has the exact gradient
//!
//! ```text
//! ∂/∂w_k = −γ p_k (g_k − ḡ)·h̄ + λ p_k (ln p_k + H(p))
//! ```
//!
//! where `ḡ = Σ_j p_j g_j` and `h̄ = Σ_i a_i h_i` with `a = softmax(v/τ)`.
//! The `g_j` are evaluated at `θ` and so do not depend on `w`, which is what
//! makes the chain rule close without differentiating through a tape.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::clip_global_norm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("inconsistent meta-gradient inputs: {0}")]
    Dimension(String),
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
}

/// Max-subtracted softmax.
pub fn softmax_mixture(w: &[f64]) -> Vec<f64> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Natural-log entropy with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Effective number of tasks, `1 / Σ p_i²`.
pub fn n_eff(p: &[f64]) -> f64 {
    1.0 / p.iter().map(|x| x * x).sum::<f64>()
}

/// `τ ln Σ exp(v_i / τ)`, evaluated around the max.
pub fn smooth_max(v: &[f64], tau: f64) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + tau * v.iter().map(|x| ((x - max) / tau).exp()).sum::<f64>().ln()
}

/// Gradient of [`smooth_max`] with respect to `v`: `softmax(v / τ)`.
pub fn smooth_max_weights(v: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = v.iter().map(|x| x / tau).collect();
    softmax_mixture(&scaled)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaHyper {
    /// Smooth-max temperature.
    pub tau: f64,
    /// Entropy weight.
    pub entropy_weight: f64,
    /// Step size of the probe update.
    pub probe_lr: f64,
    /// Step size on the logits.
    pub meta_lr: f64,
    /// Global-norm clip on the logit gradient; 0 disables.
    pub logit_clip: f64,
}

impl Default for MetaHyper {
    fn default() -> Self {
        Self {
            tau: 0.3,
            entropy_weight: 1e-3,
            probe_lr: 1e-4,
            meta_lr: 5e-3,
            logit_clip: 1.0,
        }
    }
}

impl MetaHyper {
    pub fn validate(&self) -> Result<(), MixtureError> {
        let fields = [
            ("tau", self.tau),
            ("entropy_weight", self.entropy_weight),
            ("probe_lr", self.probe_lr),
            ("meta_lr", self.meta_lr),
            ("logit_clip", self.logit_clip),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(MixtureError::Hyper(format!("{name} = {v} is not finite")));
        }
        if self.tau <= 0.0 || self.probe_lr <= 0.0 || self.meta_lr <= 0.0 {
            return Err(MixtureError::Hyper("tau, probe_lr and meta_lr must be positive".into()));
        }
        if self.entropy_weight < 0.0 || self.logit_clip < 0.0 {
            return Err(MixtureError::Hyper("entropy_weight and logit_clip must be >= 0".into()));
        }
        Ok(())
    }
}

/// Logits and the mixture they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    logits: Vec<f64>,
    p: Vec<f64>,
}

impl MixtureState {
    /// Zero logits, i.e. the uniform mixture.
    pub fn uniform(num_tasks: usize) -> Self {
        Self::from_logits(vec![0.0; num_tasks])
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        let p = softmax_mixture(&logits);
        Self { logits, p }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Softmax over the logits of `subset` only.
    pub fn restricted(&self, subset: &[usize]) -> Vec<f64> {
        let w: Vec<f64> = subset.iter().map(|&i| self.logits[i]).collect();
        softmax_mixture(&w)
    }
}

/// Everything the meta-gradient needs for one meta-iteration, restricted to
/// the active tasks.
#[derive(Clone, Debug)]
pub struct MetaGradInputs<'a> {
    pub p: &'a [f64],
    /// Train gradients at `θ`.
    pub train_grads: &'a [Vec<f64>],
    /// Validation gradients at the probe point `θ'`.
    pub val_grads: &'a [Vec<f64>],
    /// Validation losses at `θ'`.
    pub val_losses: &'a [f64],
}

impl MetaGradInputs<'_> {
    fn check(&self) -> Result<usize, MixtureError> {
        let t = self.p.len();
        if t == 0 || self.train_grads.len() != t || self.val_grads.len() != t || self.val_losses.len() != t {
            return Err(MixtureError::Dimension(format!(
                "p {}, train grads {}, val grads {}, val losses {}",
                t,
                self.train_grads.len(),
                self.val_grads.len(),
                self.val_losses.len()
            )));
        }
        let dim = self.train_grads[0].len();
        if let Some(bad) = self.train_grads.iter().chain(self.val_grads).find(|g| g.len() != dim) {
            return Err(MixtureError::Dimension(format!(
                "gradient of length {} where {dim} was expected",
                bad.len()
            )));
        }
        Ok(dim)
    }
}

/// Exact gradient of `J_τ(v) − λ H(p)` with respect to the active logits.
pub fn meta_gradient(inputs: &MetaGradInputs<'_>, hyper: &MetaHyper) -> Result<Vec<f64>, MixtureError> {
    let dim = inputs.check()?;
    let p = inputs.p;
    let a = smooth_max_weights(inputs.val_losses, hyper.tau);

    let mut g_bar = vec![0.0; dim];
    for (pj, g) in p.iter().zip(inputs.train_grads) {
        for (acc, x) in g_bar.iter_mut().zip(g) {
            *acc += pj * x;
        }
    }
    let mut h_bar = vec![0.0; dim];
    for (ai, h) in a.iter().zip(inputs.val_grads) {
        for (acc, x) in h_bar.iter_mut().zip(h) {
            *acc += ai * x;
        }
    }
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
    let g_bar_h = dot(&g_bar, &h_bar);
    let h = entropy(p);

    Ok(p.iter()
        .zip(inputs.train_grads)
        .map(|(&pk, gk)| {
            let align = dot(gk, &h_bar) - g_bar_h;
            let entropy_term = if pk > 0.0 { pk * (pk.ln() + h) } else { 0.0 };
            -hyper.probe_lr * pk * align + hyper.entropy_weight * entropy_term
        })
        .collect())
}

/// One clipped descent step on the logits; `subset` maps entries of `grad`
/// to logit indices (all logits when `None`).
pub fn update_logits(state: &MixtureState, grad: &[f64], subset: Option<&[usize]>, hyper: &MetaHyper) -> MixtureState {
    let clipped = clip_global_norm(grad, hyper.logit_clip);
    let mut logits = state.logits.clone();
    match subset {
        Some(idx) => {
            for (&i, g) in idx.iter().zip(&clipped) {
                logits[i] -= hyper.meta_lr * g;
            }
        }
        None => {
            for (w, g) in logits.iter_mut().zip(&clipped) {
                *w -= hyper.meta_lr * g;
            }
        }
    }
    MixtureState::from_logits(logits)
}
