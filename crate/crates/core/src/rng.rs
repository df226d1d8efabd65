//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (a counter-based generator with a
//! published reference algorithm), seeded from the user seed via
//! `seed_from_u64` and separated into named streams so that, e.g., adding a
//! dropout layer never perturbs the data shuffle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Split = 4,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Uniform integer in `0..n` using 64-bit draws, so results do not depend on
/// the platform's `usize` width.
pub fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    rng.gen_range(0..n as u64) as usize
}

/// In-place Fisher-Yates shuffle driven by [`below`].
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}
