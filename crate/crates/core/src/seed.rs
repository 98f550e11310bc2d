//! Splittable seeding: every random stream is keyed by the master seed, a
//! purpose string and an index, so results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive an independent generator for `(master, purpose, index)`.
pub fn stream(master: u64, purpose: &str, index: u64) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"kmn-seed-v1");
    hasher.update(master.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
