//! Stable seed derivation.
//!
//! Every random stream in a simulation is keyed by a tuple of integers
//! (master seed, stream tag, client id, round, ...). The tuple is folded through
//! the SplitMix64 finalizer, so derived seeds are identical on every platform and
//! independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used by the simulator when deriving seeds from the master seed.
pub mod tag {
    pub const DATA: u64 = 0x01;
    pub const SPLIT: u64 = 0x02;
    pub const PARTITION: u64 = 0x03;
    pub const FLEET: u64 = 0x04;
    pub const PLUGIN_INIT: u64 = 0x05;
    pub const LOCAL_INIT: u64 = 0x06;
    pub const CLIENT: u64 = 0x07;
    pub const ROUND: u64 = 0x08;
    pub const ADVERSARY: u64 = 0x09;
    pub const CORRUPTION: u64 = 0x0a;
    pub const LOCAL_SPLIT: u64 = 0x0b;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into a single 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(GOLDEN, |acc, &p| {
        splitmix64(acc.wrapping_add(GOLDEN) ^ splitmix64(p.wrapping_add(GOLDEN)))
    })
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    rng_from(derive_seed(parts))
}
