//! Counter-based randomness.
//!
//! Every random quantity in the crate is keyed by `(seed, stream, index)`, so a
//! draw does not depend on how many draws happened before it or on which
//! worker evaluated it. Sequential consumers (shuffles, minibatch order, weight
//! initialisation) get a ChaCha stream seeded from the same key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags separating independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    Subset = 2,
    Train = 3,
    Select = 4,
    Generate = 5,
    Component = 6,
    KMeans = 7,
    Stratified = 8,
    Baseline = 9,
    Experiment = 10,
    Init = 11,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a seed, a stream tag and any number of counters.
#[inline]
pub fn key(seed: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    h = mix64(h ^ (stream as u64).wrapping_mul(GOLDEN));
    for &c in counters {
        h = mix64(h.wrapping_add(GOLDEN) ^ c);
    }
    h
}

/// Uniform draw in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn uniform(seed: u64, stream: Stream, counters: &[u64]) -> f64 {
    to_unit(key(seed, stream, counters))
}

#[inline]
fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw (Box-Muller on two keyed uniforms).
pub fn normal(seed: u64, stream: Stream, counters: &[u64]) -> f64 {
    let h = key(seed, stream, counters);
    // open interval (0, 1] for the log
    let u1 = 1.0 - to_unit(h);
    let u2 = to_unit(mix64(h ^ GOLDEN));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Child seed for a sub-computation (experiment cell, repetition, iteration).
pub fn derive(seed: u64, stream: Stream, counters: &[u64]) -> u64 {
    key(seed, stream, counters)
}

/// Sequential generator for consumers that need a stream rather than keyed draws.
pub fn stream(seed: u64, stream: Stream, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, stream, counters))
}
