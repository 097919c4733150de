//! Independent, reproducible random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const Q_NET: u64 = 1;
pub const V_NET: u64 = 2;
pub const U_NET: u64 = 3;
pub const EXPLORATION: u64 = 10;
pub const REPLAY: u64 = 11;
pub const ENVIRONMENT: u64 = 12;
pub const EVALUATION: u64 = 13;

/// ChaCha stream `stream` under key `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used for stateless keyed hashing.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
