use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::mixture::MetaHyper;
use crate::model::TinyLmConfig;
use crate::optim::AdamWConfig;
use crate::tasks::SamplingMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adapt,
    SftUniform,
    SftProportional,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Adapt, Method::SftUniform, Method::SftProportional];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Adapt => "adapt",
            Method::SftUniform => "sft_uniform",
            Method::SftProportional => "sft_proportional",
        }
    }

    pub fn is_sft(self) -> bool {
        self != Method::Adapt
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

fn default_peak_lr() -> f64 {
    3e-3
}
fn default_warmup() -> usize {
    200
}
fn default_floor() -> f64 {
    0.1
}
fn default_tasks_per_step() -> usize {
    6
}

/// One training run. Unset batch and accumulation sizes take the per-method
/// defaults (1 and 4 for ADAPT, 8 and 8 for the SFT baselines).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub budget_tokens: usize,
    /// Name of the suite the run trains on.
    pub suite: String,
    /// Absent for non-LM suites.
    #[serde(default)]
    pub model: Option<TinyLmConfig>,
    #[serde(default)]
    pub meta: MetaHyper,
    #[serde(default)]
    pub adamw: AdamWConfig,
    #[serde(default = "default_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_floor")]
    pub floor_fraction: f64,
    #[serde(default = "default_tasks_per_step")]
    pub tasks_per_step: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Defaults to the train batch size.
    #[serde(default)]
    pub val_batch_size: Option<usize>,
    #[serde(default)]
    pub accumulation_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Take the probe point as the new parameters instead of an AdamW step.
    #[serde(default)]
    pub adopt_probe: bool,
    #[serde(default)]
    pub sampling: SamplingMode,
    /// Defaults to `max(B / 200, 1)`.
    #[serde(default)]
    pub log_interval_tokens: Option<usize>,
    /// Stop once any task has cycled through its train split this many times.
    #[serde(default)]
    pub max_epochs: Option<usize>,
}

impl RunConfig {
    pub fn new(method: Method, budget_tokens: usize, suite: impl Into<String>) -> Self {
        Self {
            method,
            budget_tokens,
            suite: suite.into(),
            model: None,
            meta: MetaHyper::default(),
            adamw: AdamWConfig::default(),
            peak_lr: default_peak_lr(),
            warmup_steps: default_warmup(),
            floor_fraction: default_floor(),
            tasks_per_step: default_tasks_per_step(),
            batch_size: None,
            val_batch_size: None,
            accumulation_steps: None,
            seed: 0,
            adopt_probe: false,
            sampling: SamplingMode::default(),
            log_interval_tokens: None,
            max_epochs: None,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(if self.method.is_sft() { 8 } else { 1 })
    }

    pub fn val_batch_size(&self) -> usize {
        self.val_batch_size.unwrap_or_else(|| self.batch_size())
    }

    pub fn accumulation_steps(&self) -> usize {
        self.accumulation_steps
            .unwrap_or(if self.method.is_sft() { 8 } else { 4 })
    }

    pub fn log_interval(&self) -> usize {
        self.log_interval_tokens.unwrap_or(self.budget_tokens / 200).max(1)
    }

    /// Checks everything that does not depend on the suite.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.budget_tokens == 0 {
            return bad("budget_tokens must be positive".into());
        }
        if self.batch_size() == 0 || self.val_batch_size() == 0 || self.accumulation_steps() == 0 {
            return bad("batch sizes and accumulation_steps must be positive".into());
        }
        if self.method == Method::Adapt && self.tasks_per_step == 0 {
            return bad("tasks_per_step must be positive".into());
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr {} must be positive", self.peak_lr));
        }
        if !(self.floor_fraction > 0.0 && self.floor_fraction <= 1.0) {
            return bad(format!("floor_fraction {} not in (0, 1]", self.floor_fraction));
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || a.eps <= 0.0
            || a.weight_decay < 0.0
            || a.max_grad_norm < 0.0
        {
            return bad("AdamW hyperparameters out of range".into());
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        self.meta.validate()?;
        Ok(())
    }

    /// Suite-dependent checks.
    pub fn validate_for(&self, num_tasks: usize) -> Result<(), TrainError> {
        self.validate()?;
        if num_tasks == 0 {
            return Err(TrainError::InvalidConfig("suite has no tasks".into()));
        }
        if self.method == Method::Adapt && self.tasks_per_step > num_tasks {
            return Err(TrainError::TooFewTasks {
                tasks_per_step: self.tasks_per_step,
                tasks: num_tasks,
            });
        }
        Ok(())
    }
}
