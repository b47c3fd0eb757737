//! Seed derivation.
//!
//! Every random stream in a run is derived from `(master seed, label, indices)`
//! by hashing with SHA-256 and taking the first eight bytes. Labels are short
//! stable strings such as `"init"`, `"rff"` or `"trial"`; the label length is
//! hashed too, so `("ab", [1])` and `("a", [..])` never share a preimage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator used for every stream in the simulator.
pub type SimRng = ChaCha8Rng;

/// Derives a child seed from a parent seed, a component label and indices.
pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update((indices.len() as u64).to_le_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng_for(master: u64, label: &str, indices: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, label, indices))
}

/// Per-round, per-client generator streams for a federated course.
///
/// Round numbers are absolute, so replaying rounds `s+1..=s+k` of a course with
/// the same stream reproduces the original client randomness exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundStream {
    pub seed: u64,
}

impl RoundStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn derived(master: u64, label: &str, indices: &[u64]) -> Self {
        Self::new(derive_seed(master, label, indices))
    }

    pub fn client_rng(&self, round: usize, client: usize) -> SimRng {
        rng_for(self.seed, "round-client", &[round as u64, client as u64])
    }
}
