//! Portable, stream-split random numbers.
//!
//! Every random draw in this crate comes from ChaCha8 keyed by a 64-bit seed
//! (expanded with `SeedableRng::seed_from_u64`) and a 64-bit stream id set via
//! `ChaCha8Rng::set_stream`. Independent work units (ensemble instances,
//! sampling batches) use distinct stream ids, so results do not depend on how
//! work is scheduled across threads.
//!
//! Uniform reals are `(next_u64() >> 11) * 2^-53` mapped affinely onto the
//! target interval, which pins the bit pattern of every draw.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw on `[0, 1)` with 53 random bits.
#[inline]
pub fn unit_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw on `[lo, hi)`.
#[inline]
pub fn uniform<R: RngCore>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// Derives a child seed from `(seed, stream, index)`; used to give each
/// member of a family of instances its own reproducible seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = stream_rng(seed, stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}
