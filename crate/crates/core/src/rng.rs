//! Deterministic seed streams.
//!
//! Every stochastic draw in the toolkit is keyed by a base seed plus a path of
//! counters (epoch, step, example, view). Two draws with different paths never
//! share generator state, so skipping one draw never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a counter path into a single 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| {
        splitmix(acc ^ splitmix(p.wrapping_add(GOLDEN)))
    })
}

pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags keep unrelated draws apart even when counters coincide.
pub mod tag {
    pub const STORE_INIT: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const DATA: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const VIEW: u64 = 6;
    pub const PRETRAIN: u64 = 7;
}
