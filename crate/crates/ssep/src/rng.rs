//! Deterministic counter-keyed random streams.
//!
//! Every stochastic routine in the crate draws from a [`Stream`] keyed by
//! `(seed, stage label, index)`. Keys are derived by splitmix64 mixing, so
//! streams for different replicas or stages are independent for all
//! practical purposes, and a given key always yields the same ChaCha8
//! sequence regardless of platform, thread count, or call order. Replica
//! `i` of stage `"x"` produces identical draws whether replicas run
//! sequentially or on a work-stealing pool.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Portable deterministic generator used throughout the crate.
pub type Stream = ChaCha8Rng;

/// splitmix64 finalizer: bijective 64-bit mix with full avalanche.
#[must_use]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a hash of a label, used to key stages by name.
#[must_use]
pub fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stream keyed by `(seed, stage, index)`.
///
/// The 256-bit ChaCha key is the splitmix64 orbit of the mixed triple, so
/// nearby seeds or indices share no key material.
#[must_use]
pub fn stream(seed: u64, stage: &str, index: u64) -> Stream {
    let mut state = mix64(seed ^ fnv1a64(stage)).wrapping_add(mix64(index ^ 0xa076_1d64_78bd_642f));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Exponential variate with the given rate, by inversion.
///
/// Uses `1 - u` so the argument of `ln` is in (0, 1] and the result is
/// finite for every possible draw.
pub fn exponential(rng: &mut Stream, rate: f64) -> f64 {
    use rand::Rng;
    let u: f64 = rng.random();
    -(-u).ln_1p() / rate
}
