use serde::{Deserialize, Serialize};

use super::TaskDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StaticMode {
    Uniform,
    Proportional,
}

/// Fixed task-sampling distribution: `1/T` each, or train-size proportional.
pub fn static_weights(datasets: &[TaskDataset], mode: StaticMode) -> Vec<f64> {
    match mode {
        StaticMode::Uniform => vec![1.0 / datasets.len() as f64; datasets.len()],
        StaticMode::Proportional => {
            let sizes: Vec<f64> = datasets.iter().map(|d| d.train_size as f64).collect();
            proportional_weights(&sizes)
        }
    }
}

/// `count_i / Σ count_j`.
pub fn proportional_weights(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}
