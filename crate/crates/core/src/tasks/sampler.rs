use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Split, TaskDataset, TaskError};
use crate::model::TokenBatch;
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Shuffled passes without replacement.
    #[default]
    Cycle,
    /// Independent uniform draws with replacement.
    Iid,
}

#[derive(Clone, Debug)]
struct SplitCursor {
    perm: Vec<usize>,
    cursor: usize,
    epochs: usize,
    rng: ChaCha8Rng,
}

impl SplitCursor {
    fn new(len: usize, mut rng: ChaCha8Rng) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut rng);
        Self {
            perm,
            cursor: 0,
            epochs: 0,
            rng,
        }
    }

    fn next(&mut self, mode: SamplingMode) -> usize {
        match mode {
            SamplingMode::Iid => self.rng.random_range(0..self.perm.len()),
            SamplingMode::Cycle => {
                if self.cursor == self.perm.len() {
                    self.perm.shuffle(&mut self.rng);
                    self.cursor = 0;
                    self.epochs += 1;
                }
                self.cursor += 1;
                self.perm[self.cursor - 1]
            }
        }
    }
}

/// Sampling position for one task: a cursor and permutation per split, each
/// on its own seeded stream.
#[derive(Clone, Debug)]
pub struct SamplerState {
    splits: [SplitCursor; 3],
    mode: SamplingMode,
}

impl SamplerState {
    pub fn new(task_index: usize, dataset: &TaskDataset, seed: u64, mode: SamplingMode) -> Self {
        let cursor = |s: Split| {
            SplitCursor::new(
                dataset.split(s).len(),
                stream(seed, Stream::Sampler(task_index, s.index())),
            )
        };
        Self {
            splits: [cursor(Split::Train), cursor(Split::Val), cursor(Split::Test)],
            mode,
        }
    }

    /// Completed passes over `split`.
    pub fn epochs(&self, split: Split) -> usize {
        self.splits[split.index()].epochs
    }
}

/// Draws `batch_size` examples from `split`, concatenates instruction and
/// response, and left-pads to the longest row.
pub fn sample_batch(
    dataset: &TaskDataset,
    split: Split,
    batch_size: usize,
    state: &mut SamplerState,
) -> Result<TokenBatch, TaskError> {
    let examples = dataset.split(split);
    if batch_size == 0 || batch_size > examples.len() {
        return Err(TaskError::BatchTooLarge {
            batch_size,
            split,
            size: examples.len(),
        });
    }
    let mode = state.mode;
    let cursor = &mut state.splits[split.index()];
    let seqs: Vec<Vec<u32>> = (0..batch_size).map(|_| examples[cursor.next(mode)].tokens()).collect();
    Ok(TokenBatch::from_sequences(&seqs)?)
}
