//! Seeded random streams.
//!
//! Every run is driven by one master seed. Independent streams (sweep
//! points, annealing steps, repetitions) are derived by counter-based
//! splitting: the ChaCha8 key comes from the master seed and the stream
//! index selects the ChaCha stream. Stream `i` is therefore the same no
//! matter which worker or in which order it is consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream 0 of the master seed.
pub fn master(seed: u64) -> SimRng {
    stream(seed, 0)
}

/// Stream `index` of the master seed.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
