//! Hierarchical seeding.
//!
//! Every random stream in a run is keyed by `(master seed, stage, index)`.
//! The key is packed verbatim into a ChaCha8 seed, so distinct keys give
//! distinct generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pipeline stage owning a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stage {
    Data = 1,
    Partition = 2,
    Mcmc = 3,
    Fit = 4,
    Aggregate = 5,
    GroundTruth = 6,
    Chain = 7,
    Sweep = 8,
    Baseline = 9,
}

/// Generator for `(master, stage, index)`.
pub fn stream(master: u64, stage: Stage, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&(stage as u64).to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    seed[24..32].copy_from_slice(b"napseed\0");
    ChaCha8Rng::from_seed(seed)
}

/// Child seed for a nested component that takes a plain `u64` seed.
///
/// SplitMix64 finalizer over the packed key; a bijection of its input, so two
/// keys collide only if their pre-mix values collide.
pub fn child_seed(master: u64, stage: Stage, index: u64) -> u64 {
    let pre = master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((stage as u64) << 56)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    splitmix(pre)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
