use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::mixture::MetaHyper;
use crate::model::TinyLmConfig;
use crate::optim::AdamWConfig;
use crate::tasks::{generate_suite, load_jsonl_suite, SamplingMode, SplitFractions, SuiteConfig, TaskDataset};
use crate::trainer::{
    self, BudgetedRunRecord, LmWorkload, Method, QuadraticSuiteConfig, QuadraticWorkload, RunConfig, TrainError,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "ADAPTMIX_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSource {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SuiteSource {
    Synthetic(SuiteConfig),
    Manifest(ManifestSource),
    Quadratic(QuadraticSuiteConfig),
}

/// Optional replacements for the `RunConfig` defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub meta: Option<MetaHyper>,
    pub adamw: Option<AdamWConfig>,
    pub peak_lr: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub floor_fraction: Option<f64>,
    pub tasks_per_step: Option<usize>,
    pub batch_size: Option<usize>,
    pub val_batch_size: Option<usize>,
    pub accumulation_steps: Option<usize>,
    /// Batch size for the SFT methods only; wins over `batch_size`.
    pub sft_batch_size: Option<usize>,
    pub sft_accumulation_steps: Option<usize>,
    pub adopt_probe: Option<bool>,
    pub sampling: Option<SamplingMode>,
    pub log_interval_tokens: Option<usize>,
    pub max_epochs: Option<usize>,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_fractions() -> Vec<f64> {
    vec![0.01]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}
fn default_eval_examples() -> usize {
    32
}
fn default_entropy_weights() -> Vec<f64> {
    vec![0.0, 1e-4, 1e-3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub suite: SuiteSource,
    /// Ignored for quadratic suites.
    #[serde(default)]
    pub model: TinyLmConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Each in (0, 1]; the budget is this fraction of the suite's train tokens.
    #[serde(default = "default_fractions")]
    pub budget_fractions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub overrides: Overrides,
    /// Validation examples per task behind every logged loss.
    #[serde(default = "default_eval_examples")]
    pub eval_examples: usize,
    /// λ values for `ablate-entropy`.
    #[serde(default = "default_entropy_weights")]
    pub entropy_weights: Vec<f64>,
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending field by JSON pointer.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            pointer: to_pointer(e.path()),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file, applies the `ADAPTMIX_SEED` override and resolves the
    /// manifest path.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse::<u64>().map_err(|_| CliError::Config {
                pointer: format!("${SEED_ENV}"),
                message: format!("expected an unsigned integer, got {v:?}"),
            })?;
            cfg.seeds = vec![seed];
        }
        if let SuiteSource::Manifest(m) = &mut cfg.suite {
            if m.path.is_relative() {
                if let Some(dir) = path.parent() {
                    m.path = dir.join(&m.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let err = |pointer: &str, message: String| {
            Err(CliError::Config {
                pointer: pointer.to_string(),
                message,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return err(
                "/schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        if self.methods.is_empty() {
            return err("/methods", "at least one method is required".into());
        }
        if self.seeds.is_empty() {
            return err("/seeds", "at least one seed is required".into());
        }
        if self.budget_fractions.is_empty() {
            return err("/budget_fractions", "at least one budget fraction is required".into());
        }
        for (i, f) in self.budget_fractions.iter().enumerate() {
            if !(*f > 0.0 && *f <= 1.0) {
                return err(&format!("/budget_fractions/{i}"), format!("{f} is not in (0, 1]"));
            }
        }
        for (i, l) in self.entropy_weights.iter().enumerate() {
            if !(*l >= 0.0 && l.is_finite()) {
                return err(&format!("/entropy_weights/{i}"), format!("{l} must be finite and >= 0"));
            }
        }
        if self.eval_examples == 0 {
            return err("/eval_examples", "must be positive".into());
        }
        if !matches!(self.suite, SuiteSource::Quadratic(_)) {
            if let Err(e) = self.model.validate() {
                return err("/model", e.to_string());
            }
        }
        // surface override problems before any run starts
        for m in &self.methods {
            let rc = self.run_config(*m, 1, 0, "check");
            if let Err(e) = rc.validate() {
                return err("/overrides", e.to_string());
            }
        }
        Ok(())
    }

    pub fn run_config(&self, method: Method, budget_tokens: usize, seed: u64, suite: &str) -> RunConfig {
        let o = &self.overrides;
        let mut c = RunConfig::new(method, budget_tokens, suite);
        c.seed = seed;
        if !matches!(self.suite, SuiteSource::Quadratic(_)) {
            c.model = Some(self.model.clone());
        }
        if let Some(m) = &o.meta {
            c.meta = m.clone();
        }
        if let Some(a) = &o.adamw {
            c.adamw = a.clone();
        }
        c.peak_lr = o.peak_lr.unwrap_or(c.peak_lr);
        c.warmup_steps = o.warmup_steps.unwrap_or(c.warmup_steps);
        c.floor_fraction = o.floor_fraction.unwrap_or(c.floor_fraction);
        c.tasks_per_step = o.tasks_per_step.unwrap_or(c.tasks_per_step);
        c.batch_size = o.batch_size;
        c.val_batch_size = o.val_batch_size;
        c.accumulation_steps = o.accumulation_steps;
        if method.is_sft() {
            c.batch_size = o.sft_batch_size.or(c.batch_size);
            c.accumulation_steps = o.sft_accumulation_steps.or(c.accumulation_steps);
        }
        c.adopt_probe = o.adopt_probe.unwrap_or(false);
        c.sampling = o.sampling.unwrap_or_default();
        c.log_interval_tokens = o.log_interval_tokens;
        c.max_epochs = o.max_epochs;
        c
    }
}

fn to_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// A loaded suite, ready to train on.
pub enum Suite {
    Lm(LmWorkload),
    Quadratic(QuadraticWorkload),
}

impl Suite {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        match &cfg.suite {
            SuiteSource::Synthetic(s) => {
                let data = generate_suite(s).map_err(TrainError::from)?;
                Self::lm(s.name.clone(), data, cfg)
            }
            SuiteSource::Manifest(m) => {
                let data = load_jsonl_suite(&m.path, m.fractions, m.seed).map_err(TrainError::from)?;
                let name = crate::tasks::Manifest::read(&m.path)
                    .ok()
                    .and_then(|man| man.name)
                    .unwrap_or_else(|| {
                        m.path
                            .file_stem()
                            .map_or("manifest".into(), |s| s.to_string_lossy().into_owned())
                    });
                Self::lm(name, data, cfg)
            }
            SuiteSource::Quadratic(q) => Ok(Suite::Quadratic(QuadraticWorkload::from_config(q)?)),
        }
    }

    fn lm(name: String, data: Vec<TaskDataset>, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let vocab = cfg.model.vocab_size;
        for ds in &data {
            for split in [&ds.train, &ds.val, &ds.test] {
                if let Some(ex) = split.iter().find(|e| e.tokens().iter().any(|&t| t as usize >= vocab)) {
                    return Err(CliError::Config {
                        pointer: "/model/vocab_size".into(),
                        message: format!(
                            "task {} example {} has a token id >= vocab_size {vocab}",
                            ds.task_id, ex.id
                        ),
                    });
                }
            }
        }
        Ok(Suite::Lm(LmWorkload::new(
            name,
            data,
            cfg.model.clone(),
            cfg.eval_examples,
        )?))
    }

    pub fn name(&self) -> &str {
        use trainer::Workload;
        match self {
            Suite::Lm(w) => w.name(),
            Suite::Quadratic(w) => w.name(),
        }
    }

    pub fn total_train_tokens(&self) -> usize {
        use trainer::Workload;
        match self {
            Suite::Lm(w) => w.total_train_tokens(),
            Suite::Quadratic(w) => w.total_train_tokens(),
        }
    }

    /// `max(1, round(fraction × total train tokens))`.
    pub fn budget(&self, fraction: f64) -> usize {
        ((fraction * self.total_train_tokens() as f64).round() as usize).max(1)
    }

    pub fn run(&self, config: &RunConfig) -> Result<BudgetedRunRecord, TrainError> {
        match self {
            Suite::Lm(w) => trainer::run(w, config),
            Suite::Quadratic(w) => trainer::run(w, config),
        }
    }
}
