//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit seed and derives its own
//! ChaCha stream, so results never depend on call order across subsystems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// A stream for `seed`, separated from other uses of the same seed by `stream`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation(rng: &mut StreamRng, n: usize) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

// Stream identifiers; distinct ids keep subsystems independent.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SPLIT: u64 = 2;
pub(crate) const STREAM_BATCH: u64 = 3;
pub(crate) const STREAM_NOISE: u64 = 4;
pub(crate) const STREAM_INITIAL_STATE: u64 = 5;
pub(crate) const STREAM_PHASE: u64 = 6;
pub(crate) const STREAM_POWER: u64 = 7;

/// Per-item stream, e.g. one per trajectory, so items can be generated in
/// any order.
pub fn substream(seed: u64, id: u64, index: u64) -> StreamRng {
    stream(seed, (id << 32) | (index & 0xffff_ffff))
}
