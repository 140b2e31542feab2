//! Counter-based random streams.
//!
//! Every independent unit of Monte Carlo work (a dataset sample, a pixel
//! sample on one channel, an evaluation draw) gets its own ChaCha stream
//! keyed by `(seed, domain)` and selected by a 64-bit stream index. Results
//! therefore never depend on scheduling or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::num::Real;

pub type StreamRng = ChaCha8Rng;

/// Separates the key space of unrelated consumers of the same user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Dataset = 1,
    Training = 2,
    Render = 3,
    Evaluation = 4,
    Audit = 5,
    Init = 6,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Uniform variate in `[0, 1)`.
#[inline]
pub fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.random::<f64>())
}

#[inline]
pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

pub fn fill_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, out: &mut [T]) {
    for v in out {
        *v = normal(rng);
    }
}
