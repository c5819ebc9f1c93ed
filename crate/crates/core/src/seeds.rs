//! Seed derivation. A child seed is the first eight bytes (little endian)
//! of SHA-256 over the parent seed and each part, all encoded as 8-byte
//! little-endian integers. Stage tags are hashed to integers with
//! [`tag`] first.

use sha2::{Digest, Sha256};

pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Stable integer for a stage name.
pub fn tag(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}
