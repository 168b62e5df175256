//! Splittable random streams.
//!
//! Every stochastic routine in the crate draws from a stream derived from
//! `(base seed, purpose tag, replicate index)`. Distinct keys give
//! statistically independent streams, and a key always yields the same
//! stream, so ensembles can be evaluated in any order — or in parallel on
//! any number of threads — without changing a single drawn number.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags. One per independent source of randomness.
pub mod tag {
    /// Regime-switching jump times and embedded-chain draws.
    pub const CHAIN: u64 = 1;
    /// Brownian increments.
    pub const BROWNIAN: u64 = 2;
    /// Bounded-Lipschitz test-function family.
    pub const BL_FAMILY: u64 = 3;
    /// Rows of a convergence sweep.
    pub const SWEEP: u64 = 4;
    /// Critical-point seed jitter and other solver randomness.
    pub const SOLVER: u64 = 5;
}

/// SplitMix64 finalizer; bijective on `u64`.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// 256-bit stream seed derived from the key triple.
///
/// Absorbs the three words through the SplitMix64 permutation, then squeezes
/// four words; collisions between distinct keys would require a collision of
/// the underlying bijective mixer chain.
pub fn derive_seed(base_seed: u64, purpose: u64, replicate: u64) -> [u8; 32] {
    let mut s = mix(base_seed ^ GOLDEN);
    s = mix(s ^ purpose.wrapping_mul(GOLDEN));
    s = mix(s ^ replicate.wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    let mut seed = [0u8; 32];
    for (k, chunk) in seed.chunks_exact_mut(8).enumerate() {
        let word = mix(s.wrapping_add((k as u64 + 1).wrapping_mul(GOLDEN)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    seed
}

/// The stream for a `(base seed, purpose, replicate)` key.
pub fn stream(base_seed: u64, purpose: u64, replicate: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(base_seed, purpose, replicate))
}
