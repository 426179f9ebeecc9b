use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Named random substreams used across the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Split,
    Shuffle,
    AttackSelect,
    Noise,
    Init,
    Perturb,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Split => "split",
            Stream::Shuffle => "shuffle",
            Stream::AttackSelect => "attack-select",
            Stream::Noise => "noise",
            Stream::Init => "init",
            Stream::Perturb => "perturb",
        }
    }
}

/// Derives independent generators from one master seed by hashing the
/// seed together with a stream name and an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, stream: Stream) -> ChaCha8Rng {
        self.indexed(stream, 0)
    }

    /// Substream `index` of `stream`, e.g. one per generator or per epoch.
    pub fn indexed(&self, stream: Stream, index: u64) -> ChaCha8Rng {
        self.derive(stream.name(), index)
    }

    /// Substream for an arbitrary label, for callers needing more names.
    pub fn derive(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update(index.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}
