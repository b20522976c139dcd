//! Seeded random streams. Each consumer gets its own ChaCha stream keyed by
//! `(seed, purpose)`, so drawing from one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for the per-run random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Suite,
    Split,
    SubsetSelection,
    TaskSampling,
    Noise,
    /// Sampler for one task split: `(task index, split index)`.
    Sampler(usize, usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Suite => 2,
            Stream::Split => 3,
            Stream::SubsetSelection => 4,
            Stream::TaskSampling => 5,
            Stream::Noise => 6,
            Stream::Sampler(task, split) => 1_000 + 4 * task as u64 + split as u64,
        }
    }
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.id());
    rng
}
