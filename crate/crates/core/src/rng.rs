//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline is keyed by a master seed plus the
//! coordinates of the task that consumes it, so results never depend on
//! scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with an ordered list of coordinates into a new seed.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// A generator for the substream identified by `coords`.
pub fn stream(master: u64, coords: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, coords))
}

/// Domain tags keep substreams of different stages apart.
pub(crate) mod tag {
    pub const PROBS: u64 = 0x5052_4f42;
    pub const CASCADES: u64 = 0x4341_5343;
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const WALKS: u64 = 0x5741_4c4b;
    pub const SGNS: u64 = 0x5347_4e53;
    pub const DATASET: u64 = 0x4441_5441;
    pub const TRAIN: u64 = 0x5452_4149;
    pub const INIT: u64 = 0x494e_4954;
}
