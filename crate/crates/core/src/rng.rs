//! Seed-deterministic RNG streams.
//!
//! Parallel work is split into fixed partitions, each owning its own ChaCha
//! stream derived from `(seed, stream)`, so results do not depend on how many
//! threads execute the partitions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream namespaces, kept disjoint so no two consumers share a stream.
pub mod streams {
    pub const CALIBRATION_DRAWS: u64 = 0;
    pub const MARGIN_FIT: u64 = 1 << 40;
    pub const MARGIN_REFIT: u64 = 2 << 40;
    pub const PREDICTIVE: u64 = 3 << 40;
    pub const SIMULATION: u64 = 4 << 40;
    pub const SPLIT: u64 = 5 << 40;
    pub const CHAIN: u64 = 6 << 40;
}
