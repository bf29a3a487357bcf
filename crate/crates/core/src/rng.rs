//! Counter-style random streams.
//!
//! Every estimate draws from its own ChaCha stream keyed by the master seed,
//! a domain tag and two counters (typically a subset mask and a replication
//! index). Results therefore do not depend on scheduling or thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Separates the key spaces of unrelated consumers of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Subset = 1,
    Permutation = 2,
    ExactPermutation = 3,
    Moments = 4,
    Replication = 5,
    Sample = 6,
    Estimator = 7,
    Diagnostic = 8,
}

pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// A child seed, e.g. for replication `index` of an experiment.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    stream(seed, domain, index, 0).next_u64()
}
