//! Seeded random-number substreams.
//!
//! All randomness in a scenario run flows from one `u64` seed. Each module
//! draws from its own named substream so that adding draws in one place
//! never perturbs another module's sequence.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Deterministic generator for (seed, stream name). Identical inputs give
/// identical streams on every platform.
pub fn substream(seed: u64, name: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}
