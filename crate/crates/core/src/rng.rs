//! Seeded random source shared by data generation, training and attacks.
//!
//! The generator is ChaCha8 (`rand_chacha`), whose output stream is fixed
//! by its specification. Floats are derived from raw words with explicit
//! bit arithmetic, so draws are identical on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = seeded(seed);
    r.set_stream(stream);
    r
}

/// Uniform on `[0, 1)` with 24 random bits.
pub fn unit_f32(rng: &mut Rng) -> f32 {
    (rng.next_u32() >> 8) as f32 * (1.0 / 16_777_216.0)
}

/// Uniform on `[0, 1)` with 53 random bits.
pub fn unit_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform on `[lo, hi)`.
pub fn uniform_f64(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// `u·(2r − 1)` for `r` from [`unit_f32`], computed in double and rounded
/// once to single: a value in `[−u, u]`.
pub fn symmetric_f32(rng: &mut Rng, u: f32) -> f32 {
    (u as f64 * (2.0 * unit_f32(rng) as f64 - 1.0)) as f32
}

/// Uniform integer in `0..n` by rejection sampling.
pub fn below(rng: &mut Rng, n: usize) -> usize {
    assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// Fisher–Yates shuffle driven by [`below`].
pub fn shuffle<T>(rng: &mut Rng, v: &mut [T]) {
    for i in (1..v.len()).rev() {
        v.swap(i, below(rng, i + 1));
    }
}
