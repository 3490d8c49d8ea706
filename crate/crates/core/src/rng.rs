//! Seeded, splittable random streams.
//!
//! Every consumer of randomness (weight init, batch order, each DSU insertion
//! position, data generation per domain) gets its own ChaCha8 stream derived
//! from `(seed, name)`. Streams never share state, so adding a consumer does
//! not perturb the draws of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

/// FNV-1a; stable across platforms and toolchains.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

/// Tensor of standard-normal draws.
pub fn standard_normal(rng: &mut Rng, shape: impl Into<Vec<usize>>) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}
