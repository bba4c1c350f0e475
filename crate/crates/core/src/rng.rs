//! Seed derivation: one root seed, expanded into independent named streams.
//!
//! Every random decision in the pipeline (split shuffling, weight init,
//! augmentation draws, synthetic rendering) pulls from a stream derived as
//! `sha256(root_seed || purpose)` so that runs are reproducible from a single
//! knob and streams never alias across purposes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a deterministic RNG for a named purpose from the root seed.
pub fn derive_rng(root_seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Derive a child seed (for APIs that take a `u64` rather than an RNG).
pub fn derive_seed(root_seed: u64, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_deterministic() {
        let mut a = derive_rng(42, "split");
        let mut b = derive_rng(42, "split");
        let xs: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn purposes_do_not_alias() {
        let mut a = derive_rng(42, "split");
        let mut b = derive_rng(42, "init");
        let xs: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.random()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn derive_seed_differs_by_purpose() {
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
        assert_ne!(derive_seed(7, "a"), derive_seed(8, "a"));
    }
}
