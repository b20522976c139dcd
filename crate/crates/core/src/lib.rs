//! Token-budgeted multi-task training with meta-learned task mixtures.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: tensors, a reverse-mode tape and a finite-difference oracle.
//! - [`model`]: a tiny causal language model and an analytic quadratic task family.
//! - [`tasks`]: task datasets, synthetic suites, JSONL ingestion and batch sampling.
//! - [`mixture`]: softmax mixtures, entropy, smooth worst-case aggregation and
//!   the closed-form mixture meta-gradient.
//! - [`optim`]: AdamW, warmup + cosine schedule, global-norm clipping.
//! - [`trainer`]: the budgeted adaptive-mixture loop and the static baselines.
//! - [`metrics`]: loss-curve efficiency metrics and score-table win rates.
//! - [`cli`]: experiment configs, grid execution and report emission.

pub mod cli;
pub mod diffcore;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tasks;
pub mod trainer;
