//! Integer-token JSON-lines task files and suite manifests.
//!
//! A task file holds one object per line with string fields `instruction`
//! and `response`, each a space-separated list of positive token ids. A
//! manifest lists the task files of a suite:
//!
//! ```json
//! {"name": "demo", "tasks": [{"task_id": "t0", "path": "t0.jsonl", "category": "QA", "instance_count": 1200}]}
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Example, TaskDataset, TaskError};
use crate::model::PAD_ID;
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task_id: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_count: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tasks: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, TaskError> {
        let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| TaskError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if manifest.tasks.is_empty() {
            return Err(TaskError::Manifest {
                path: path.to_path_buf(),
                message: "no tasks listed".into(),
            });
        }
        Ok(manifest)
    }

    /// Instance-count weighting, when every entry carries a count.
    pub fn instance_weights(&self) -> Option<Vec<f64>> {
        let counts: Option<Vec<f64>> = self.tasks.iter().map(|t| t.instance_count.map(|c| c as f64)).collect();
        counts.map(|c| super::proportional_weights(&c))
    }
}

#[derive(Deserialize)]
struct Record {
    instruction: Option<String>,
    response: Option<String>,
}

fn parse_tokens(field: &str, text: &str) -> Result<Vec<u32>, String> {
    text.split_whitespace()
        .map(|tok| {
            let id: u32 = tok
                .parse()
                .map_err(|_| format!("field {field:?}: {tok:?} is not a non-negative integer"))?;
            if id == PAD_ID {
                return Err(format!("field {field:?}: token id 0 is reserved for padding"));
            }
            Ok(id)
        })
        .collect()
}

fn split_sizes(task: &str, n: usize, fractions: SplitFractions) -> Result<(usize, usize, usize), TaskError> {
    let val = (n as f64 * fractions.val).round() as usize;
    let test = (n as f64 * fractions.test).round() as usize;
    if val == 0 || test == 0 || val + test >= n {
        return Err(TaskError::TooSmall {
            task: task.to_string(),
            n,
        });
    }
    Ok((n - val - test, val, test))
}

/// Reads one task file and splits it with a seeded shuffle.
pub fn load_task_file(
    path: &Path,
    task_id: &str,
    fractions: SplitFractions,
    seed: u64,
    task_index: usize,
) -> Result<TaskDataset, TaskError> {
    let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |line: usize, message: String| TaskError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| malformed(line, e.to_string()))?;
        let instruction = rec
            .instruction
            .ok_or_else(|| malformed(line, "missing field \"instruction\"".into()))?;
        let response = rec
            .response
            .ok_or_else(|| malformed(line, "missing field \"response\"".into()))?;
        let example = Example {
            id: line,
            instruction: parse_tokens("instruction", &instruction).map_err(|m| malformed(line, m))?,
            response: parse_tokens("response", &response).map_err(|m| malformed(line, m))?,
        };
        if example.is_empty() {
            return Err(malformed(line, "example has no tokens".into()));
        }
        examples.push(example);
    }
    if examples.is_empty() {
        return Err(TaskError::EmptyTask(task_id.to_string()));
    }
    let (_, val, test) = split_sizes(task_id, examples.len(), fractions)?;
    let mut rng = stream(seed.wrapping_add(task_index as u64), Stream::Split);
    examples.shuffle(&mut rng);
    let n = examples.len();
    let test_split = examples.split_off(n - test);
    let val_split = examples.split_off(n - test - val);
    Ok(TaskDataset::new(task_id, examples, val_split, test_split))
}

/// Loads every task listed in the manifest at `path`.
pub fn load_jsonl_suite(path: &Path, fractions: SplitFractions, seed: u64) -> Result<Vec<TaskDataset>, TaskError> {
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut suite = Vec::with_capacity(manifest.tasks.len());
    for (i, entry) in manifest.tasks.iter().enumerate() {
        if suite.iter().any(|d: &TaskDataset| d.task_id == entry.task_id) {
            return Err(TaskError::Manifest {
                path: path.to_path_buf(),
                message: format!("duplicate task_id {:?}", entry.task_id),
            });
        }
        let file = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let mut ds = load_task_file(&file, &entry.task_id, fractions, seed, i)?;
        ds.category = entry.category.clone();
        ds.instance_count = entry.instance_count;
        suite.push(ds);
    }
    Ok(suite)
}

fn join_tokens(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

/// Writes one `<task_id>.jsonl` per task (train, then val, then test) and a
/// `manifest.json` into `dir`. Returns the manifest path.
pub fn write_jsonl_suite(dir: &Path, name: &str, suite: &[TaskDataset]) -> Result<PathBuf, TaskError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TaskError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut entries = Vec::with_capacity(suite.len());
    for ds in suite {
        let file = format!("{}.jsonl", ds.task_id);
        let path = dir.join(&file);
        let mut out = fs::File::create(&path).map_err(io(&path))?;
        for ex in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            let line = serde_json::json!({
                "instruction": join_tokens(&ex.instruction),
                "response": join_tokens(&ex.response),
            });
            writeln!(out, "{line}").map_err(io(&path))?;
        }
        entries.push(ManifestEntry {
            task_id: ds.task_id.clone(),
            path: PathBuf::from(file),
            category: ds.category.clone(),
            instance_count: ds.instance_count,
        });
    }
    let manifest = Manifest {
        name: Some(name.to_string()),
        tasks: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}
