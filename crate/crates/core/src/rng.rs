//! Seeded randomness. Every randomized operation takes an explicit seed and
//! derives sub-streams from it, so results are pure functions of the seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a named sub-stream and index.
pub fn derive(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix(seed);
    for b in tag.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h ^ index.wrapping_mul(0x2545_f491_4f6c_dd1d))
}
