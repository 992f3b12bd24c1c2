//! Named, reproducible random streams.
//!
//! Every stochastic stage draws from a stream derived from the master seed and
//! a stage name, so any stage can be replayed in isolation from the ledger.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Record of every named stream handed out during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedLedger {
    pub master: u64,
    pub streams: BTreeMap<String, u64>,
}

impl SeedLedger {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            streams: BTreeMap::new(),
        }
    }

    /// Returns the seed for `name`, recording it.
    pub fn seed(&mut self, name: impl Into<String>) -> u64 {
        let name = name.into();
        let seed = derive_seed(self.master, &name);
        self.streams.insert(name, seed);
        seed
    }
}
