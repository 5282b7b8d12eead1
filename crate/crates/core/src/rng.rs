//! Seed handling. Every random stage takes an explicit `u64` seed; child
//! streams are derived with splitmix64 so results never depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `seed`, tagged by `stream` so that
/// different consumers of the same master seed do not collide.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) mod streams {
    pub const INCLUSION_TRIALS: u64 = 1;
    pub const SURE_PROBES: u64 = 2;
    pub const POISSON_TRIALS: u64 = 3;
    pub const SIM_GRAPH: u64 = 4;
    pub const SIM_TRIAL: u64 = 5;
    pub const SIM_SURE: u64 = 6;
}
