//! Task datasets: synthetic generation, JSONL ingestion, epoch-cycling batch
//! sampling, token counting and static mixture weights.

mod categories;
mod dataset;
mod jsonl;
mod sampler;
mod synthetic;
mod weights;

pub use categories::{category_instance_weights, natural_instructions_categories, CategoryStat};
pub use dataset::{Example, Split, TaskDataset};
pub use jsonl::{load_jsonl_suite, load_task_file, write_jsonl_suite, Manifest, ManifestEntry, SplitFractions};
pub use sampler::{sample_batch, SamplerState, SamplingMode};
pub use synthetic::{generate_suite, Difficulty, SuiteConfig};
pub use weights::{proportional_weights, static_weights, StaticMode};

use std::path::PathBuf;

use thiserror::Error;

use crate::model::{ModelError, TokenBatch};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid suite config: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("task {0:?} has no examples")]
    EmptyTask(String),
    #[error("task {task:?} has {n} examples, too few for non-empty train/val/test splits")]
    TooSmall { task: String, n: usize },
    #[error("batch size {batch_size} exceeds {split:?} split size {size}")]
    BatchTooLarge {
        batch_size: usize,
        split: Split,
        size: usize,
    },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Number of non-pad entries in `batch`.
pub fn count_nonpad_tokens(batch: &TokenBatch) -> usize {
    batch.count_nonpad_tokens()
}
