//! Independent, reproducible random streams.
//!
//! Every consumer of randomness (a rollout worker for one task at one step,
//! a checkpoint evaluation, ...) gets its own ChaCha stream keyed by the run
//! seed and its coordinates, so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Rollout = 1,
    Checkpoint = 2,
    Entropy = 3,
    Eval = 4,
    Pretrain = 5,
    Instance = 6,
    Gaussian = 7,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for `(seed, purpose, a, b)`.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for word in [purpose as u64, a, b] {
        h = splitmix64(h ^ word);
    }
    ChaCha8Rng::seed_from_u64(h)
}
