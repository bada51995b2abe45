//! Seeded RNG helpers shared across the pipeline.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The run RNG used everywhere a seed is configured.
pub fn seed_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable FNV-1a hash for deriving sub-seeds from string keys.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Derive a deterministic sub-seed from a base seed and a string key,
/// independent of iteration order.
pub fn derive_seed(base: u64, key: &str, counter: u64) -> u64 {
    fnv1a(format!("{base}:{key}:{counter}").as_bytes())
}

/// Standard normal draw via Box-Muller (avoids an extra distribution dep).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
