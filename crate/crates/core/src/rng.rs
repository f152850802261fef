//! Seeded random streams.
//!
//! All randomness goes through ChaCha8 generators whose 256-bit key is the
//! SHA-256 digest of `(seed, stream name)`. Every weight matrix, phase vector
//! or noise sequence therefore has its own substream, independent of the
//! order in which other blocks are drawn, and the draws are identical on every
//! platform.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator for the named substream of `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw on `[0, 1)` with 53 bits of resolution.
pub fn unit_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw on `[-1, 1)`.
pub fn symmetric_unit<R: RngCore>(rng: &mut R) -> f64 {
    2.0 * unit_f64(rng) - 1.0
}
