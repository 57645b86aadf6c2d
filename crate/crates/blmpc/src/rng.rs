//! Counter-based randomness.
//!
//! Every random draw in this crate comes from a ChaCha stream keyed by a
//! seed with the draw's index as the stream number. The i-th item of a
//! batch therefore gets the same bits whether the batch is generated
//! sequentially or in parallel, in any order.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// RNG for the `index`-th draw of the batch identified by `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Standard-normal vector for the `index`-th draw under `seed`.
pub fn standard_normal_vector(dim: usize, seed: u64, index: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, index);
    DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng))
}

/// Derive a sub-seed for a nested context (round, iteration) from a base
/// seed. SplitMix64 finalizer; distinct inputs give well-separated seeds.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
