//! Seed derivation. Every random draw in a run descends from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of stream identifiers into an independent seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(root: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, path))
}

/// Stream tags used with [`derive_seed`].
pub mod stream {
    pub const INIT: u64 = 1;
    pub const VIEW: u64 = 2;
    pub const CORRUPT: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const UNK: u64 = 5;
    pub const DECODER_INIT: u64 = 6;
    pub const DECODER_NEG: u64 = 7;
    pub const DECODER_SHUFFLE: u64 = 8;
    pub const MONITOR: u64 = 9;
    pub const TEST_NEG: u64 = 10;
}
