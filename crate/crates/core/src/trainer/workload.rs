//! What the training loops need from a task suite: batches, token counts and
//! per-task loss/gradient evaluations over a flat parameter vector.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diffcore::ParamSet;
use crate::model::{quadratic_loss, QuadraticTaskSpec, TinyLm, TinyLmConfig, TokenBatch};
use crate::rng::{stream, Stream};
use crate::tasks::{count_nonpad_tokens, sample_batch, SamplerState, SamplingMode, Split, TaskDataset};

pub trait Workload: Sync {
    type Batch: Send + Sync;
    type Sampler: Send;

    /// Suite identifier, used to group comparable runs.
    fn name(&self) -> &str;
    fn task_ids(&self) -> Vec<String>;
    fn num_tasks(&self) -> usize {
        self.task_ids().len()
    }
    /// `|D_i^train|` per task.
    fn train_sizes(&self) -> Vec<usize>;
    /// Total train tokens over all tasks.
    fn total_train_tokens(&self) -> usize;
    /// Average train tokens per example, uniform over tasks. Only used for the
    /// provisional schedule length.
    fn mean_example_tokens(&self) -> f64;
    fn init_params(&self) -> Vec<f64>;
    fn sampler(&self, seed: u64, mode: SamplingMode) -> Self::Sampler;
    fn sample(
        &self,
        sampler: &mut Self::Sampler,
        task: usize,
        split: Split,
        batch_size: usize,
    ) -> Result<Self::Batch, TrainError>;
    /// Independent recount of the non-pad tokens in a batch.
    fn batch_tokens(&self, batch: &Self::Batch) -> usize;
    /// Loss, gradient and the token count reported by the loss evaluation.
    fn loss_and_grad(&self, theta: &[f64], batch: &Self::Batch) -> Result<(f64, Vec<f64>, usize), TrainError>;
    /// Held-out validation loss for logging.
    fn eval_loss(&self, theta: &[f64], task: usize) -> Result<f64, TrainError>;
    /// Largest number of completed train epochs over all tasks.
    fn max_train_epochs(&self, sampler: &Self::Sampler) -> usize;
}

/// Tiny LM over token datasets.
pub struct LmWorkload {
    name: String,
    datasets: Vec<TaskDataset>,
    lm: TinyLm,
    template: ParamSet,
    eval_batches: Vec<TokenBatch>,
}

impl LmWorkload {
    /// `eval_examples` caps how many validation examples per task enter the
    /// logged validation loss.
    pub fn new(
        name: impl Into<String>,
        datasets: Vec<TaskDataset>,
        config: TinyLmConfig,
        eval_examples: usize,
    ) -> Result<Self, TrainError> {
        let lm = TinyLm::new(config)?;
        if datasets.is_empty() {
            return Err(TrainError::InvalidConfig("suite has no tasks".into()));
        }
        let longest = datasets.iter().map(TaskDataset::max_len).max().unwrap_or(0);
        if longest > lm.config().context_len {
            return Err(TrainError::InvalidConfig(format!(
                "longest example has {longest} tokens but context_len is {}",
                lm.config().context_len
            )));
        }
        let eval_batches = datasets
            .iter()
            .map(|ds| {
                let seqs: Vec<Vec<u32>> = ds.val.iter().take(eval_examples.max(1)).map(|e| e.tokens()).collect();
                TokenBatch::from_sequences(&seqs)
            })
            .collect::<Result<_, _>>()?;
        let template = lm.init();
        Ok(Self {
            name: name.into(),
            datasets,
            lm,
            template,
            eval_batches,
        })
    }

    pub fn datasets(&self) -> &[TaskDataset] {
        &self.datasets
    }

    pub fn model(&self) -> &TinyLm {
        &self.lm
    }

    fn params(&self, theta: &[f64]) -> Result<ParamSet, TrainError> {
        Ok(self.template.unflatten(theta).map_err(crate::model::ModelError::from)?)
    }
}

impl Workload for LmWorkload {
    type Batch = TokenBatch;
    type Sampler = Vec<SamplerState>;

    fn name(&self) -> &str {
        &self.name
    }

    fn task_ids(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.task_id.clone()).collect()
    }

    fn num_tasks(&self) -> usize {
        self.datasets.len()
    }

    fn train_sizes(&self) -> Vec<usize> {
        self.datasets.iter().map(|d| d.train_size).collect()
    }

    fn total_train_tokens(&self) -> usize {
        self.datasets.iter().map(|d| d.total_train_tokens).sum()
    }

    fn mean_example_tokens(&self) -> f64 {
        self.datasets.iter().map(TaskDataset::mean_train_len).sum::<f64>() / self.datasets.len() as f64
    }

    fn init_params(&self) -> Vec<f64> {
        self.template.flatten()
    }

    fn sampler(&self, seed: u64, mode: SamplingMode) -> Self::Sampler {
        self.datasets
            .iter()
            .enumerate()
            .map(|(i, ds)| SamplerState::new(i, ds, seed, mode))
            .collect()
    }

    fn sample(
        &self,
        sampler: &mut Self::Sampler,
        task: usize,
        split: Split,
        batch_size: usize,
    ) -> Result<TokenBatch, TrainError> {
        Ok(sample_batch(
            &self.datasets[task],
            split,
            batch_size,
            &mut sampler[task],
        )?)
    }

    fn batch_tokens(&self, batch: &TokenBatch) -> usize {
        count_nonpad_tokens(batch)
    }

    fn loss_and_grad(&self, theta: &[f64], batch: &TokenBatch) -> Result<(f64, Vec<f64>, usize), TrainError> {
        Ok(self.lm.loss_and_grad(&self.params(theta)?, batch)?)
    }

    fn eval_loss(&self, theta: &[f64], task: usize) -> Result<f64, TrainError> {
        Ok(self.lm.loss_value(&self.params(theta)?, &self.eval_batches[task])?)
    }

    fn max_train_epochs(&self, sampler: &Self::Sampler) -> usize {
        sampler.iter().map(|s| s.epochs(Split::Train)).max().unwrap_or(0)
    }
}

fn default_quad_name() -> String {
    "quadratic".into()
}

/// Generator settings for a family of quadratic tasks sharing one parameter
/// vector. Hard tasks have distant centers and small curvature, so they start
/// with high loss and converge slowly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSuiteConfig {
    #[serde(default = "default_quad_name")]
    pub name: String,
    pub dim: usize,
    pub hard: Vec<bool>,
    pub easy_center_scale: f64,
    pub hard_center_scale: f64,
    pub easy_eigen_range: (f64, f64),
    pub hard_eigen_range: (f64, f64),
    pub noise_scale: f64,
    /// Token cost charged for one example.
    pub tokens_per_example: usize,
    /// Nominal `|D_i^train|`, used for proportional weights and epoch counts.
    pub train_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl QuadraticSuiteConfig {
    /// Two hard tasks followed by four easy ones.
    pub fn heterogeneous(seed: u64) -> Self {
        Self {
            name: "quad-hetero6".into(),
            dim: 8,
            hard: vec![true, true, false, false, false, false],
            easy_center_scale: 0.3,
            hard_center_scale: 2.0,
            easy_eigen_range: (1.0, 2.0),
            hard_eigen_range: (0.2, 0.6),
            noise_scale: 0.0,
            tokens_per_example: 16,
            train_size: 200,
            seed,
        }
    }

    pub fn generate(&self) -> Result<Vec<QuadraticTaskSpec>, TrainError> {
        if self.dim == 0 || self.hard.len() < 2 || self.tokens_per_example == 0 || self.train_size == 0 {
            return Err(TrainError::InvalidConfig(
                "quadratic suite needs dim > 0, >= 2 tasks, positive token cost and train size".into(),
            ));
        }
        let mut rng = stream(self.seed, Stream::Suite);
        self.hard
            .iter()
            .map(|&hard| {
                let (scale, (lo, hi)) = if hard {
                    (self.hard_center_scale, self.hard_eigen_range)
                } else {
                    (self.easy_center_scale, self.easy_eigen_range)
                };
                let eig: Vec<f64> = (0..self.dim).map(|_| rng.random_range(lo..=hi)).collect();
                // center on a sphere of radius `scale`
                let raw: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                let center = raw.iter().map(|x| scale * x / norm).collect();
                Ok(QuadraticTaskSpec::random(
                    &eig,
                    center,
                    0.0,
                    self.noise_scale,
                    &mut rng,
                )?)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct QuadBatch {
    pub task: usize,
    pub rows: usize,
    noise_seed: u64,
}

pub struct QuadSampler {
    rng: ChaCha8Rng,
    draws: Vec<usize>,
}

/// Quadratic tasks with a fixed token cost per example.
pub struct QuadraticWorkload {
    name: String,
    specs: Vec<QuadraticTaskSpec>,
    tokens_per_example: usize,
    train_size: usize,
}

impl QuadraticWorkload {
    pub fn new(
        name: impl Into<String>,
        specs: Vec<QuadraticTaskSpec>,
        tokens_per_example: usize,
        train_size: usize,
    ) -> Self {
        Self {
            name: name.into(),
            specs,
            tokens_per_example,
            train_size,
        }
    }

    pub fn from_config(config: &QuadraticSuiteConfig) -> Result<Self, TrainError> {
        Ok(Self::new(
            config.name.clone(),
            config.generate()?,
            config.tokens_per_example,
            config.train_size,
        ))
    }

    pub fn specs(&self) -> &[QuadraticTaskSpec] {
        &self.specs
    }
}

impl Workload for QuadraticWorkload {
    type Batch = QuadBatch;
    type Sampler = QuadSampler;

    fn name(&self) -> &str {
        &self.name
    }

    fn task_ids(&self) -> Vec<String> {
        (0..self.specs.len()).map(|i| format!("quad{i}")).collect()
    }

    fn num_tasks(&self) -> usize {
        self.specs.len()
    }

    fn train_sizes(&self) -> Vec<usize> {
        vec![self.train_size; self.specs.len()]
    }

    fn total_train_tokens(&self) -> usize {
        self.train_size * self.tokens_per_example * self.specs.len()
    }

    fn mean_example_tokens(&self) -> f64 {
        self.tokens_per_example as f64
    }

    fn init_params(&self) -> Vec<f64> {
        vec![0.0; self.specs[0].dim]
    }

    fn sampler(&self, seed: u64, _mode: SamplingMode) -> QuadSampler {
        QuadSampler {
            rng: stream(seed, Stream::Noise),
            draws: vec![0; self.specs.len()],
        }
    }

    fn sample(
        &self,
        sampler: &mut QuadSampler,
        task: usize,
        split: Split,
        batch_size: usize,
    ) -> Result<QuadBatch, TrainError> {
        if split == Split::Train {
            sampler.draws[task] += batch_size;
        }
        Ok(QuadBatch {
            task,
            rows: batch_size,
            noise_seed: sampler.rng.next_u64(),
        })
    }

    fn batch_tokens(&self, batch: &QuadBatch) -> usize {
        batch.rows * self.tokens_per_example
    }

    fn loss_and_grad(&self, theta: &[f64], batch: &QuadBatch) -> Result<(f64, Vec<f64>, usize), TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(batch.noise_seed);
        let (loss, grad) = quadratic_loss(theta, &self.specs[batch.task], &mut rng)?;
        Ok((loss, grad, batch.rows * self.tokens_per_example))
    }

    fn eval_loss(&self, theta: &[f64], task: usize) -> Result<f64, TrainError> {
        Ok(self.specs[task].eval(theta)?.0)
    }

    fn max_train_epochs(&self, sampler: &QuadSampler) -> usize {
        sampler.draws.iter().map(|d| d / self.train_size).max().unwrap_or(0)
    }
}
