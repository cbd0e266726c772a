//! Seeding conventions.
//!
//! Every random stream is a [`ChaCha8Rng`] seeded through [`SeedableRng::seed_from_u64`].
//! Per-replica seeds are derived from a master seed with the SplitMix64 finalizer,
//! so results never depend on scheduling order or worker count.
//!
//! Replica `i` of a run with master seed `m` uses `replica_seed(m, i)`. Within a replica
//! the environment is sampled from `stream_seed(r, ENVIRONMENT_STREAM)` and the tree from
//! `stream_seed(r, TREE_STREAM)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const ENVIRONMENT_STREAM: u64 = 0;
pub const TREE_STREAM: u64 = 1;
pub const ORACLE_STREAM: u64 = 2;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn replica_seed(master: u64, replica: u64) -> u64 {
    splitmix64(splitmix64(master) ^ replica.wrapping_mul(GOLDEN_GAMMA))
}

pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5eed)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
