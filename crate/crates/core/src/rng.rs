//! Deterministic random substreams.
//!
//! Every repetition of a simulation draws from its own ChaCha8 stream, keyed by
//! the scenario seed and a stream index. The ChaCha stream id is a counter-based
//! split, so results do not depend on how repetitions are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream index reserved for subgroup construction.
pub const CONSTRUCTION_STREAM: u64 = u64::MAX;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used by repetition `rep` of a simulation.
pub fn repetition_stream(seed: u64, rep: usize) -> ChaCha8Rng {
    substream(seed, rep as u64)
}
