//! A tiny strictly causal language model.
//!
//! Each position sees its own embedding plus the mean embedding of every
//! real token up to and including it. That summary goes through two `tanh`
//! layers and an output projection. There are no positional parameters, so
//! the loss of a sequence does not depend on how much left padding it gets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, TokenBatch, PAD_ID};
use crate::diffcore::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyLmConfig {
    /// Includes the pad id 0.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TinyLmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 48,
            embed_dim: 16,
            hidden_dim: 32,
            context_len: 32,
            seed: 0,
        }
    }
}

impl TinyLmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 2 {
            return Err(ModelError::InvalidConfig("vocab_size must be >= 2".into()));
        }
        if self.context_len < 2 {
            return Err(ModelError::InvalidConfig("context_len must be >= 2".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "embed_dim and hidden_dim must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, e, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        v * e + e * h + h * h + h * v + (h + h + v)
    }
}

/// Handles into a tape after a forward pass.
#[derive(Debug)]
pub struct LmForward {
    pub loss: Var,
    pub loss_value: f64,
    /// Non-pad input tokens of the batch.
    pub nonpad_tokens: usize,
    /// Tape leaves for each parameter, in `ParamSet` order.
    pub params: Vec<(String, Var)>,
}

#[derive(Clone, Debug)]
pub struct TinyLm {
    config: TinyLmConfig,
}

const PARAM_NAMES: [&str; 7] = ["embed", "w1", "b1", "w2", "b2", "w_out", "b_out"];

impl TinyLm {
    pub fn new(config: TinyLmConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &TinyLmConfig {
        &self.config
    }

    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, embedding
    /// uniform in `±1`, biases zero.
    pub fn init(&self) -> ParamSet {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut uniform = |rows: usize, cols: usize, scale: f64| {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
            Tensor::matrix(rows, cols, data).expect("finite init")
        };
        let embed = uniform(c.vocab_size, c.embed_dim, 1.0);
        let w1 = uniform(c.embed_dim, c.hidden_dim, 1.0 / (c.embed_dim as f64).sqrt());
        let w2 = uniform(c.hidden_dim, c.hidden_dim, 1.0 / (c.hidden_dim as f64).sqrt());
        let w_out = uniform(c.hidden_dim, c.vocab_size, 1.0 / (c.hidden_dim as f64).sqrt());
        let mut ps = ParamSet::new();
        let entries = [
            embed,
            w1,
            Tensor::zeros(&[c.hidden_dim]),
            w2,
            Tensor::zeros(&[c.hidden_dim]),
            w_out,
            Tensor::zeros(&[c.vocab_size]),
        ];
        for (name, t) in PARAM_NAMES.iter().zip(entries) {
            ps.insert(*name, t).expect("unique names");
        }
        ps
    }

    fn check_batch(&self, batch: &TokenBatch) -> Result<(), ModelError> {
        if batch.width() > self.config.context_len {
            return Err(ModelError::TooLong {
                width: batch.width(),
                context_len: self.config.context_len,
            });
        }
        if let Some(&id) = batch.ids().iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Records the mean next-token cross-entropy over non-pad targets.
    ///
    /// A position `t` contributes when both token `t` and token `t + 1` are
    /// real; the first real token of each row is never a target.
    pub fn loss(&self, params: &ParamSet, batch: &TokenBatch, tape: &mut Tape) -> Result<LmForward, ModelError> {
        self.check_batch(batch)?;
        let (rows, width) = (batch.rows(), batch.width());
        let n = rows * width;
        let ids = batch.ids();

        let mut targets = vec![0usize; n];
        let mut target_mask = vec![0.0; n];
        for r in 0..rows {
            for t in 0..width - 1 {
                let i = r * width + t;
                if ids[i] != PAD_ID && ids[i + 1] != PAD_ID {
                    targets[i] = ids[i + 1] as usize;
                    target_mask[i] = 1.0;
                }
            }
        }
        if target_mask.iter().all(|&m| m == 0.0) {
            return Err(ModelError::EmptyBatch);
        }

        let mut vars = Vec::with_capacity(PARAM_NAMES.len());
        for name in PARAM_NAMES {
            let t = params
                .get(name)
                .ok_or_else(|| ModelError::InvalidConfig(format!("missing parameter {name}")))?;
            vars.push((name.to_string(), tape.leaf(t.clone())));
        }
        let p = |k: usize| vars[k].1;

        let context = tape.constant(context_matrix(batch));
        let x = tape.embedding(p(0), ids.iter().map(|&id| id as usize).collect())?;
        let s = tape.matmul(context, x)?;
        let h1 = tape.matmul(s, p(1))?;
        let h1 = tape.add(h1, p(2))?;
        let h1 = tape.tanh(h1)?;
        let h2 = tape.matmul(h1, p(3))?;
        let h2 = tape.add(h2, p(4))?;
        let h2 = tape.tanh(h2)?;
        let logits = tape.matmul(h2, p(5))?;
        let logits = tape.add(logits, p(6))?;
        let per_pos = tape.softmax_cross_entropy(logits, targets)?;
        let loss = tape.masked_mean(per_pos, target_mask)?;

        Ok(LmForward {
            loss,
            loss_value: tape.value(loss).item().expect("scalar loss"),
            nonpad_tokens: batch.count_nonpad_tokens(),
            params: vars,
        })
    }

    /// Loss, flattened gradient (in `ParamSet` order) and non-pad token count.
    pub fn loss_and_grad(&self, params: &ParamSet, batch: &TokenBatch) -> Result<(f64, Vec<f64>, usize), ModelError> {
        let mut tape = Tape::new();
        let fwd = self.loss(params, batch, &mut tape)?;
        let grads = tape.backward(fwd.loss)?;
        let mut flat = Vec::with_capacity(params.num_params());
        for (_, var) in &fwd.params {
            flat.extend_from_slice(grads.wrt(*var).data());
        }
        Ok((fwd.loss_value, flat, fwd.nonpad_tokens))
    }

    pub fn loss_value(&self, params: &ParamSet, batch: &TokenBatch) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        Ok(self.loss(params, batch, &mut tape)?.loss_value)
    }
}

/// Block-diagonal causal mixing matrix: row `t` of each sequence has weight 1
/// on itself plus `1/k` on each of the `k` real tokens at or before `t`.
fn context_matrix(batch: &TokenBatch) -> Tensor {
    let (rows, width) = (batch.rows(), batch.width());
    let n = rows * width;
    let mut m = vec![0.0; n * n];
    for r in 0..rows {
        let row = batch.row(r);
        let start = row.iter().position(|&id| id != PAD_ID).unwrap_or(width);
        for t in start..width {
            let k = (t - start + 1) as f64;
            let i = r * width + t;
            for j in start..=t {
                m[i * n + r * width + j] = 1.0 / k;
            }
            m[i * n + i] += 1.0;
        }
    }
    Tensor::matrix(n, n, m).expect("finite context weights")
}
