//! Labeled random streams.
//!
//! A stream for `(seed, label)` is a ChaCha8 generator keyed with
//! `SHA-256("uwtrust/rng/v1" || seed as u64 LE || label bytes)`. ChaCha is
//! counter based, so each stream's output depends only on its key and on how
//! many values that stream itself produced. Modules therefore never perturb
//! each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

const DOMAIN: &[u8] = b"uwtrust/rng/v1";

/// Factory for the per-run labeled streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives the generator for `label`, e.g. `"mobility"` or `"channel"`.
    pub fn stream(&self, label: &str) -> StreamRng {
        let mut h = Sha256::new();
        h.update(DOMAIN);
        h.update(self.seed.to_le_bytes());
        h.update(label.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(key)
    }
}
