//! Seeded random streams.
//!
//! A run has one user-facing seed. Every consumer of randomness (fold splitting,
//! weight init, augmentation, batch mixing, ...) draws from its own named
//! substream so that adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const FOLDS: &str = "folds";
pub const INIT: &str = "init";
pub const AUGMENT: &str = "augment";
pub const MIX: &str = "mix";
pub const SHUFFLE: &str = "shuffle";
pub const SPLIT: &str = "split";
pub const SYNTH: &str = "synth";

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent generator for `name` from the run seed.
pub fn substream(seed: u64, name: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

pub fn derive_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then splitmix64 finalization of the combination.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
