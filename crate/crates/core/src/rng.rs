//! Deterministic random streams.
//!
//! All randomness comes from `rand_xorshift::XorShiftRng` (Marsaglia's
//! xorshift128 with shifts 11, 8, 19) seeded through `seed_from_u64`. Integer
//! and unit-interval draws below use only raw `next_u32`/`next_u64` outputs so
//! the streams can be reproduced outside Rust.

use rand::{RngCore, SeedableRng};
use rand_xorshift::XorShiftRng;

pub type Rng = XorShiftRng;

pub fn rng(seed: u64) -> Rng {
    XorShiftRng::seed_from_u64(seed)
}

/// Derives an independent seed for a numbered sub-stream.
pub fn substream(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform integer in `[lo, hi]` via `(next_u32 * span) >> 32`.
pub fn uniform_int(rng: &mut Rng, lo: i64, hi: i64) -> i64 {
    assert!(lo <= hi, "empty range {lo}..={hi}");
    let span = (hi - lo + 1) as u64;
    lo + ((u64::from(rng.next_u32()) * span) >> 32) as i64
}

/// Uniform in `[0, 1)` from the top 53 bits of `next_u64`.
pub fn uniform_unit(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform_unit(rng)
}

/// Fisher-Yates shuffle driven by [`uniform_int`].
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_int(rng, 0, i as i64) as usize;
        items.swap(i, j);
    }
}
