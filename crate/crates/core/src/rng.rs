//! Seeded random streams. Every random choice in the toolkit comes from a
//! ChaCha stream keyed by (seed, purpose), so runs are reproducible and
//! independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SPLIT: u64 = 1;
pub const INIT: u64 = 2;
pub const SHUFFLE: u64 = 3;
pub const DROPOUT: u64 = 4;
pub const MASKING: u64 = 5;
pub const SUITE: u64 = 6;
pub const TSNE: u64 = 7;
pub const SYNTH: u64 = 8;

pub fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Seed of the `index`-th derived run (e.g. the seeds averaged in a grid search).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
