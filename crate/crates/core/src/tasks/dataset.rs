use serde::{Deserialize, Serialize};

/// One instruction-response pair. `id` identifies the example within its
/// source task (generation index or line number).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub instruction: Vec<u32>,
    pub response: Vec<u32>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.instruction.len() + self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Instruction followed by response.
    pub fn tokens(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.instruction);
        out.extend_from_slice(&self.response);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task_id: String,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub train_size: usize,
    pub total_train_tokens: usize,
    pub category: Option<String>,
    pub instance_count: Option<u64>,
}

impl TaskDataset {
    /// Builds a dataset and derives the train statistics.
    pub fn new(task_id: impl Into<String>, train: Vec<Example>, val: Vec<Example>, test: Vec<Example>) -> Self {
        let total_train_tokens = train.iter().map(Example::len).sum();
        Self {
            task_id: task_id.into(),
            train_size: train.len(),
            total_train_tokens,
            train,
            val,
            test,
            category: None,
            instance_count: None,
        }
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Longest example (instruction + response) across all splits.
    pub fn max_len(&self) -> usize {
        Split::ALL
            .iter()
            .flat_map(|&s| self.split(s))
            .map(Example::len)
            .max()
            .unwrap_or(0)
    }

    pub fn mean_train_len(&self) -> f64 {
        self.total_train_tokens as f64 / self.train_size.max(1) as f64
    }
}
