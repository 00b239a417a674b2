//! Seeded random streams.
//!
//! Every random decision in the toolkit draws from a [`RandomSource`]. The
//! generator is ChaCha8 (`rand_chacha`), seeded through `seed_from_u64`, so a
//! seed reproduces the same stream on every platform. Independent sub-streams
//! are derived with [`RandomSource::fork`], which hashes the parent seed with a
//! label; forking never advances the parent stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RandomSource {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        RandomSource { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        Self::ALGORITHM
    }

    /// A fresh stream whose seed is derived from this stream's seed and `label`.
    pub fn fork(&self, label: &str) -> RandomSource {
        RandomSource::new(derive_seed(self.seed, label))
    }

    /// Like [`fork`](Self::fork) with a numeric label, e.g. an epoch index.
    pub fn fork_indexed(&self, label: &str, index: u64) -> RandomSource {
        RandomSource::new(derive_seed(self.seed, &format!("{label}/{index}")))
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
