//! Counter-based random draws.
//!
//! All randomness in the crate is keyed: a draw is a pure function of
//! `(seed, stream, counter)` rather than the output of a stateful generator.
//! This keeps simulation traces bit-identical under replay even when the
//! order of evaluation changes.

/// SplitMix64 finalizer. Bijective on `u64` with good avalanche behaviour.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a stream identifier into a new 64-bit key.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Uniform draw in `[0, 1)` keyed on `(key, counter)`.
pub fn uniform(key: u64, counter: u64) -> f64 {
    let bits = splitmix64(mix(key, counter));
    // 53 high bits give a uniform dyadic rational in [0, 1).
    (bits >> 11) as f64 * (1.0 / ((1u64 << 53) as f64))
}

/// Uniform draw in `[-1, 1)` keyed on `(key, counter)`.
pub fn uniform_signed(key: u64, counter: u64) -> f64 {
    2.0 * uniform(key, counter) - 1.0
}
