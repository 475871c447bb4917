//! Seed derivation and deterministic sampling helpers.
//!
//! Every stochastic choice in the crate (init draws, epoch shuffles,
//! augmentation offsets, per-cell grid seeds) flows through a ChaCha8 stream
//! whose 32-byte seed is derived by hashing `(base seed, tag, index)`.
//! Derived streams are independent and stable across platforms and releases.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 32-byte seed from a base seed, a domain-separation tag, and an index.
pub fn derive_seed_bytes(base: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(tag.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// Deterministic sub-stream for `(base, tag, index)`.
pub fn derive_rng(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed_bytes(base, tag, index))
}

/// Collapse a derived seed back to a `u64` (used for per-cell run seeds).
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let bytes = derive_seed_bytes(base, tag, index);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

/// One standard normal draw via Box-Muller on two uniform draws.
///
/// Kept in-crate so initialization streams never depend on distribution-crate
/// internals; two uniforms are consumed per call.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Seeded Fisher-Yates shuffle of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Draw `k` distinct values from `0..n` without replacement, ascending order.
pub fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: the first k slots are a uniform k-subset.
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen
}
