//! Seedable random number generation.
//!
//! A single generator type is used everywhere and is always passed explicitly;
//! there is no global RNG state. Callers that fan out work split seeds instead
//! of sharing a generator.

use rand::Rng as _;
use rand::SeedableRng;

/// The one generator type used across the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Create a generator from a seed.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derive an independent child seed, for splitting work across components.
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 step keeps child streams decorrelated.
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
