//! Seed derivation for reproducible, schedule-independent random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! base seed plus a path of integers naming its purpose (replicate, start,
//! permutation index, ...). Two streams with different paths never share
//! state, so work can be distributed across threads in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type GemRng = ChaCha8Rng;

// Stream purposes.
pub const PURPOSE_INIT: u64 = 1;
pub const PURPOSE_KMEDIAN_FIT: u64 = 2;
pub const PURPOSE_PERMUTE: u64 = 3;
pub const PURPOSE_MULTISTART: u64 = 4;
pub const PURPOSE_GAP: u64 = 5;
pub const PURPOSE_LABELS: u64 = 6;
pub const PURPOSE_RADII: u64 = 7;
pub const PURPOSE_DIRECTIONS: u64 = 8;
pub const PURPOSE_REPLICATE: u64 = 9;
pub const PURPOSE_KMEANS: u64 = 10;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers into a new seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// Generator for the stream named by `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> GemRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
