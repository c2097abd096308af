//! Seeded RNG helpers.
//!
//! Every stochastic step in the pipeline draws from a ChaCha8 stream
//! derived from (base seed, stream tag), so runs are reproducible and
//! independent stages do not share state.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

pub type Prng = ChaCha8Rng;

/// Mix a base seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_stream(base: u64, tag: u64) -> Prng {
    rng_from(derive_seed(base, tag))
}

pub fn normal_tensor(shape: &[usize], rng: &mut Prng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree")
}

pub fn uniform_tensor(shape: &[usize], lo: f32, hi: f32, rng: &mut Prng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree")
}

/// Kaiming-style init for conv/linear weights: N(0, sqrt(2/fan_in)).
pub fn kaiming_tensor(shape: &[usize], fan_in: usize, rng: &mut Prng) -> Tensor {
    let std = (2.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| rng.sample::<f32, _>(StandardNormal) * std)
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree")
}
