//! Deterministic RNG stream derivation.
//!
//! Every random consumer in the crate draws from its own ChaCha stream,
//! keyed by a `(seed, tag)` pair. Two runs with the same seed therefore
//! consume identical random sequences regardless of what other components
//! do, which is what makes checkpoints and reports bitwise reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream for `tag` under `seed`.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]); // separator so (1, "ab") != (1, "a") + junk
    hasher.update(tag.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Hex encoding of a byte slice (lowercase), used for digests.
pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
