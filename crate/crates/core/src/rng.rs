//! Seed derivation. Every random stream in a run is keyed by a tuple of
//! integers so work can be generated in any order with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Domain tags that keep independent streams from colliding.
pub mod tag {
    pub const STREAM: u64 = 0x5354_5245;
    pub const LABEL_PRIOR: u64 = 0x4c41_4245;
    pub const SCHEDULE: u64 = 0x5343_4845;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const PROFILE: u64 = 0x5052_4f46;
    pub const TRAIN: u64 = 0x5452_4149;
    pub const SELECT: u64 = 0x5345_4c45;
    pub const CLUSTER: u64 = 0x434c_5553;
    pub const MEMORY: u64 = 0x4d45_4d4f;
    pub const INIT: u64 = 0x494e_4954;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const TASK: u64 = 0x5441_534b;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_for(base: u64, parts: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, parts))
}
