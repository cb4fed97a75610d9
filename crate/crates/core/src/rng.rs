//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`). A run
//! seed is expanded to a 256-bit key by `SeedableRng::seed_from_u64`, and
//! independent purposes (weight init, shuffling, synthetic jitter) use
//! distinct ChaCha stream ids under that key, so changing how many numbers
//! one purpose consumes never shifts another.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// ChaCha stream ids, one per consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Jitter = 2,
    Shuffle = 3,
    Synthetic = 4,
    Sampling = 5,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    items.shuffle(rng);
}
