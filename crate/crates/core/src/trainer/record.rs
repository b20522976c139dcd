use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RunConfig, TrainError};

pub const FORMAT_VERSION: u32 = 1;

/// Running total of consumed train tokens against the budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BudgetCounter {
    tokens_used: usize,
    budget: usize,
}

impl BudgetCounter {
    pub fn new(budget: usize) -> Self {
        Self { tokens_used: 0, budget }
    }

    pub fn add(&mut self, tokens: usize) {
        self.tokens_used += tokens;
    }

    pub fn tokens_used(&self) -> usize {
        self.tokens_used
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn exhausted(&self) -> bool {
        self.tokens_used >= self.budget
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tokens: usize,
    /// Uniform mean over all tasks.
    pub mean_val_loss: f64,
    pub val_losses: Vec<f64>,
    pub p: Vec<f64>,
    pub entropy: f64,
    pub n_eff: f64,
    pub lr: f64,
}

/// Independent bookkeeping used to cross-check the budget counter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    /// Non-pad tokens recounted from every sampled train batch.
    pub recount_train_tokens: usize,
    /// Non-pad tokens of every sampled validation batch.
    pub val_tokens: usize,
    /// Train tokens consumed by the final iteration.
    pub last_iteration_tokens: usize,
    pub max_iteration_tokens: usize,
    /// Train tokens per task.
    pub task_tokens: Vec<usize>,
    /// Train batches drawn per task.
    pub task_batches: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format_version: u32,
    pub run_id: String,
    pub suite: String,
    pub task_ids: Vec<String>,
    pub config: RunConfig,
    #[serde(default)]
    pub budget_fraction: Option<f64>,
    pub total_tokens: usize,
    pub iterations: usize,
    pub optimizer_steps: usize,
    pub schedule_total_steps: usize,
    /// Set when the run stopped because a task exceeded `max_epochs`.
    pub data_exhausted: bool,
    pub params_digest: String,
    pub audit: RunAudit,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetedRunRecord {
    pub header: RunHeader,
    pub points: Vec<CurvePoint>,
    /// Final parameters; not serialized.
    pub final_params: Vec<f64>,
}

/// SHA-256 over the little-endian bytes of the parameters.
pub fn params_digest(theta: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in theta {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl BudgetedRunRecord {
    pub fn total_tokens(&self) -> usize {
        self.header.total_tokens
    }

    pub fn last_point(&self) -> &CurvePoint {
        self.points.last().expect("records always hold the initial point")
    }

    /// Header line followed by one curve point per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TrainError> {
        let io = |e: std::io::Error| TrainError::Io(e.to_string());
        serde_json::to_writer(&mut out, &self.header).map_err(|e| TrainError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
        for p in &self.points {
            serde_json::to_writer(&mut out, p).map_err(|e| TrainError::Io(e.to_string()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TrainError> {
        let mut lines = input
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let parse_err = |line: usize, e: serde_json::Error| TrainError::Record {
            line: line + 1,
            message: e.to_string(),
        };
        let (n, first) = lines.next().ok_or(TrainError::Record {
            line: 1,
            message: "empty record".into(),
        })?;
        let first = first.map_err(|e| TrainError::Io(e.to_string()))?;
        let header: RunHeader = serde_json::from_str(&first).map_err(|e| parse_err(n, e))?;
        if header.format_version != FORMAT_VERSION {
            return Err(TrainError::Record {
                line: n + 1,
                message: format!("unsupported format_version {}", header.format_version),
            });
        }
        let mut points = Vec::new();
        for (n, line) in lines {
            let line = line.map_err(|e| TrainError::Io(e.to_string()))?;
            points.push(serde_json::from_str(&line).map_err(|e| parse_err(n, e))?);
        }
        Ok(Self {
            header,
            points,
            final_params: Vec::new(),
        })
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self, TrainError> {
        let f = std::fs::File::open(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    /// Serialized form with the wall-clock field zeroed, for determinism checks.
    pub fn canonical_jsonl(&self) -> String {
        let mut r = self.clone();
        r.header.wall_clock_seconds = 0.0;
        r.to_jsonl()
    }
}
