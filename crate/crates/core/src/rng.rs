//! Deterministic RNG streams derived from one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Seed of a named sub-stream (e.g. `"residence"`, `"synth"`).
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    let d = digest(seed, name);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Generator keyed by `(seed, key)`; independent of the order keys are visited.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, key))
}
