//! Hierarchical seeding: every stage derives its own stream from the run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed, a stage label and an index.
pub fn derive(seed: u64, stage: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in stage.bytes() {
        h = mix(h ^ b as u64);
    }
    mix(h ^ mix(index))
}

pub fn stream(seed: u64, stage: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, stage, index))
}
