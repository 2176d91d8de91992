//! Keyed random streams so that every (window, sample) pair draws
//! independently of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOAL_TAG: u64 = 1 << 63;
const AUX_TAG: u64 = 1 << 62;

/// Stream for rollout `sample` of `window`.
pub fn rollout_stream(seed: u64, window: usize, sample: usize) -> ChaCha8Rng {
    keyed(seed, ((window as u64) << 32) | (sample as u64 & 0xffff_ffff))
}

/// Stream used by goal selection for `window`.
pub fn goal_stream(seed: u64, window: usize) -> ChaCha8Rng {
    keyed(seed, GOAL_TAG | window as u64)
}

/// Stream for anything else keyed by a small integer (batch shuffles,
/// initialization, simulator spawns).
pub fn aux_stream(seed: u64, key: u64) -> ChaCha8Rng {
    keyed(seed, AUX_TAG | key)
}

/// Seed for a numbered sub-run (training epoch and part).
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
