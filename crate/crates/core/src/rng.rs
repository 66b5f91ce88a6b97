//! Random stream plumbing.
//!
//! Every stochastic routine in the crate draws from a [`SimRng`]. Streams for
//! independent consumers are derived from one `u64` seed so an episode is fully
//! described by its seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Named sub-streams of an episode seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    InitialScene = 1,
    World = 2,
    Planner = 3,
    Filter = 4,
    Fuzz = 5,
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Splits a fresh, independent generator off `rng`.
pub fn fork(rng: &mut SimRng) -> SimRng {
    use rand::RngCore;
    let seed = rng.next_u64();
    let stream = rng.next_u64();
    let mut child = SimRng::seed_from_u64(seed);
    child.set_stream(stream);
    child
}
