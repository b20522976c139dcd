//! Synthetic instruction suites with controllable difficulty.
//!
//! Every task owns a disjoint slice of the vocabulary and generates token
//! chains `s, f(s), f(f(s)), ...` split into an instruction prefix and a
//! response suffix.
//!
//! - Easy tasks cycle through a small alphabet: a handful of transitions,
//!   learned after a few batches, so extra data is redundant.
//! - Hard tasks open with one of several key tokens, and the key selects a
//!   random cyclic permutation over a larger alphabet. Predicting the chain
//!   requires the context summary and many distinct transitions.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Example, TaskDataset, TaskError};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

fn default_name() -> String {
    "synthetic".into()
}
fn default_easy_alphabet() -> usize {
    3
}
fn default_hard_alphabet() -> usize {
    10
}
fn default_hard_keys() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Examples per task, before val/test reservation.
    pub sizes: Vec<usize>,
    pub difficulties: Vec<Difficulty>,
    pub vocab_size: usize,
    /// Inclusive range of example lengths (instruction + response).
    pub min_len: usize,
    pub max_len: usize,
    #[serde(default = "default_easy_alphabet")]
    pub easy_alphabet: usize,
    #[serde(default = "default_hard_alphabet")]
    pub hard_alphabet: usize,
    #[serde(default = "default_hard_keys")]
    pub hard_keys: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SuiteConfig {
    /// Four large easy tasks and two smaller hard ones.
    pub fn heterogeneous(seed: u64) -> Self {
        Self {
            name: "hetero6".into(),
            sizes: vec![1500, 1500, 1500, 1500, 600, 600],
            difficulties: vec![
                Difficulty::Easy,
                Difficulty::Easy,
                Difficulty::Easy,
                Difficulty::Easy,
                Difficulty::Hard,
                Difficulty::Hard,
            ],
            vocab_size: 40,
            min_len: 8,
            max_len: 14,
            easy_alphabet: default_easy_alphabet(),
            hard_alphabet: default_hard_alphabet(),
            hard_keys: default_hard_keys(),
            seed,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.sizes.len()
    }

    fn tokens_needed(&self) -> usize {
        self.difficulties
            .iter()
            .map(|d| match d {
                Difficulty::Easy => self.easy_alphabet,
                Difficulty::Hard => self.hard_alphabet + self.hard_keys,
            })
            .sum::<usize>()
            + 1
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: String| Err(TaskError::InvalidConfig(m));
        if self.sizes.len() < 2 {
            return bad("at least two tasks are required".into());
        }
        if self.difficulties.len() != self.sizes.len() {
            return bad(format!(
                "{} difficulties for {} tasks",
                self.difficulties.len(),
                self.sizes.len()
            ));
        }
        if let Some(s) = self.sizes.iter().find(|&&s| s < 3) {
            return bad(format!("task size {s} is below the 3-example minimum"));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return bad(format!("length range [{}, {}] is invalid", self.min_len, self.max_len));
        }
        if self.easy_alphabet < 2 || self.hard_alphabet < 2 || self.hard_keys == 0 {
            return bad("alphabets need >= 2 tokens and hard tasks >= 1 key".into());
        }
        if self.vocab_size < self.tokens_needed() {
            return bad(format!(
                "vocab_size {} is too small, the suite needs {}",
                self.vocab_size,
                self.tokens_needed()
            ));
        }
        Ok(())
    }
}

/// Number of `(val, test)` examples reserved from `n`: 10% each, at least one.
pub(crate) fn reservation(n: usize) -> usize {
    ((n as f64 * 0.1).round() as usize).max(1)
}

/// Generates the suite described by `config`; identical configs give
/// identical suites.
pub fn generate_suite(config: &SuiteConfig) -> Result<Vec<TaskDataset>, TaskError> {
    config.validate()?;
    let mut rng = stream(config.seed, Stream::Suite);

    // disjoint vocabulary slices, assigned in a seeded order
    let mut free: Vec<u32> = (1..config.vocab_size as u32).collect();
    free.shuffle(&mut rng);
    let mut take = |k: usize| free.drain(..k).collect::<Vec<u32>>();

    let mut suite = Vec::with_capacity(config.num_tasks());
    for (t, (&size, &difficulty)) in config.sizes.iter().zip(&config.difficulties).enumerate() {
        let generator = match difficulty {
            Difficulty::Easy => {
                let alphabet = take(config.easy_alphabet);
                Chain::new(alphabet.clone(), vec![], vec![cycle_successor(&alphabet)])
            }
            Difficulty::Hard => {
                let alphabet = take(config.hard_alphabet);
                let keys = take(config.hard_keys);
                let perms = keys
                    .iter()
                    .map(|_| {
                        let mut order = alphabet.clone();
                        order.shuffle(&mut rng);
                        cycle_successor(&order)
                    })
                    .collect();
                Chain::new(alphabet, keys, perms)
            }
        };
        let examples: Vec<Example> = (0..size)
            .map(|id| {
                let len = rng.random_range(config.min_len..=config.max_len);
                generator.example(id, len, &mut rng)
            })
            .collect();
        let reserve = reservation(size);
        let mut examples = examples;
        let test = examples.split_off(size - reserve);
        let val = examples.split_off(size - 2 * reserve);
        let name = match difficulty {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        };
        let mut ds = TaskDataset::new(format!("{name}{t}"), examples, val, test);
        ds.category = Some(name.to_string());
        suite.push(ds);
    }
    Ok(suite)
}

/// Successor table following the cyclic `order`.
fn cycle_successor(order: &[u32]) -> Vec<(u32, u32)> {
    (0..order.len())
        .map(|i| (order[i], order[(i + 1) % order.len()]))
        .collect()
}

struct Chain {
    alphabet: Vec<u32>,
    keys: Vec<u32>,
    successors: Vec<Vec<(u32, u32)>>,
}

impl Chain {
    fn new(alphabet: Vec<u32>, keys: Vec<u32>, successors: Vec<Vec<(u32, u32)>>) -> Self {
        Self {
            alphabet,
            keys,
            successors,
        }
    }

    fn next(&self, table: usize, tok: u32) -> u32 {
        self.successors[table]
            .iter()
            .find(|(from, _)| *from == tok)
            .map(|(_, to)| *to)
            .expect("token in alphabet")
    }

    fn example<R: Rng>(&self, id: usize, len: usize, rng: &mut R) -> Example {
        let mut seq = Vec::with_capacity(len);
        let table = if self.keys.is_empty() {
            0
        } else {
            let k = rng.random_range(0..self.keys.len());
            seq.push(self.keys[k]);
            k
        };
        let mut tok = self.alphabet[rng.random_range(0..self.alphabet.len())];
        while seq.len() < len {
            seq.push(tok);
            tok = self.next(table, tok);
        }
        let split = len / 2;
        Example {
            id,
            instruction: seq[..split].to_vec(),
            response: seq[split..].to_vec(),
        }
    }
}
