//! Deterministic randomness.
//!
//! Every random draw in the workbench flows from one global seed through
//! named derivations, so any stage can be rerun in isolation and reproduce
//! the run it came from.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a over the global seed and a stage label.
///
/// Intentionally not `DefaultHasher`: the derivation must be identical
/// across processes and platforms.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in global.to_le_bytes().iter().chain(label.as_bytes()) {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Seeded stream cipher RNG for a named stage.
pub fn rng_for(global: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, label))
}

/// RNG directly from a raw seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
