//! Child seed derivation.
//!
//! Every random draw in a run is keyed by `(master seed, role tag, index)`
//! through SHA-256, so runs are independent of how many siblings exist.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, role: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((role.len() as u64).to_le_bytes());
    hasher.update(role.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Two-level derivation for jobs indexed by a pair (e.g. permutation, grid point).
pub fn derive_seed2(master: u64, role: &str, outer: u64, inner: u64) -> u64 {
    derive_seed(derive_seed(master, role, outer), role, inner)
}
