//! Seed derivation and the per-task random stream.
//!
//! Every stochastic stage draws from its own [`RandomStream`] derived from the
//! master seed plus a domain label and indices, so results do not depend on
//! the order in which walks (or any other tasks) are executed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A deterministic random stream owned by exactly one task.
#[derive(Clone, Debug)]
pub struct RandomStream {
    inner: ChaCha8Rng,
    path: String,
}

impl RandomStream {
    /// Stream seeded directly from an integer, with path `"<seed>"`.
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            path: seed.to_string(),
        }
    }

    /// Derive an independent stream for `(master_seed, domain, index, attempt)`.
    ///
    /// The 256-bit ChaCha key is the SHA-256 of the little-endian encoding of
    /// the inputs, so derived streams are stable across platforms and releases.
    pub fn derive(master_seed: u64, domain: &str, index: u64, attempt: u32) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update((domain.len() as u64).to_le_bytes());
        hasher.update(domain.as_bytes());
        hasher.update(index.to_le_bytes());
        hasher.update(attempt.to_le_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self {
            inner: ChaCha8Rng::from_seed(key),
            path: format!("{master_seed}/{domain}/{index}/{attempt}"),
        }
    }

    /// Human-readable derivation path, e.g. `42/walk/17/0`.
    pub fn path(&self) -> &str {
        &self.path
    }
}

impl RngCore for RandomStream {
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

/// Short hex digest of arbitrary bytes, used for config and file provenance.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
