//! Seed derivation. Every query group draws from its own stream so results
//! do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Environment variable that supplies a default global seed.
pub const SEED_ENV: &str = "PERMURANK_SEED";

/// Stream for one group: seeded with `seed ^ id`.
pub fn group_stream(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ id)
}

/// Stream for global, non-per-group draws (world parameters, init,
/// shuffling). Disjoint from every group stream.
pub fn global_stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose + 1);
    rng
}

/// SplitMix64 finalizer, used as a cheap deterministic hash.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
