//! Seeded random streams.
//!
//! Every run derives independent ChaCha streams from a single 64-bit seed, one
//! per consumer, so that e.g. switching the sampler never perturbs the
//! simulated world.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Consumers of randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Trajectory = 1,
    Measurements = 2,
    Filter = 3,
    Schedule = 4,
}

pub fn substream(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
