//! Seeded, portable randomness.
//!
//! Every stream is a xoshiro256** generator. A named substream is seeded with
//! the first eight bytes (little-endian) of `SHA-256(seed.to_le_bytes() || name)`,
//! expanded to the full generator state with SplitMix64. Bounded integers use
//! the multiply-shift map `(next_u64 * n) >> 64` and shuffles are Fisher-Yates
//! from the last element down, so the same seed yields the same sequence in
//! any implementation of these rules.

use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use sha2::{Digest, Sha256};

/// Derives the 64-bit seed of the substream `name` under `seed`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug, Clone)]
pub struct PortableRng {
    inner: Xoshiro256StarStar,
}

impl PortableRng {
    pub fn from_seed(seed: u64) -> Self {
        Self { inner: Xoshiro256StarStar::seed_from_u64(seed) }
    }

    /// The stream named `name` under the run seed, e.g. `"noise/branch/3"`.
    pub fn substream(seed: u64, name: &str) -> Self {
        Self::from_seed(derive_seed(seed, name))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
