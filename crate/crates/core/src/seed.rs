//! Deterministic derivation of independent RNG seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of labels into a new seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, path))
}

/// Stream labels keep the RNG consumers of one run apart.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const ORDER: u64 = 2;
    pub const BUFFER: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const RAW_BUFFER: u64 = 5;
    pub const SELECTION: u64 = 6;
}
