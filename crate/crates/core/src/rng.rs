//! Seed handling. Every random quantity is a pure function of a master seed
//! and a stream index, so trials can run in any order or in parallel.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::C64;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent child seed, e.g. one per scenario realization.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    stream_rng(master, index.wrapping_add(0x5eed_0000_0000)).next_u64()
}

/// One sample of `CN(0, 1)`.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
