//! Domain-separated seed derivation.
//!
//! A single root seed fans out to independent sub-seeds (split, init,
//! shuffle, augmentation, ...) by hashing it together with a domain label.

use sha2::{Digest, Sha256};

/// First 8 bytes (little-endian) of `SHA-256(root_le ‖ domain ‖ index_le)`.
pub fn derive_seed(root: u64, domain: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
