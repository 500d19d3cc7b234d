//! Deterministic random streams.
//!
//! Every independent unit of work (a KMC realization, a training run, an
//! ensemble member) draws from its own ChaCha stream. ChaCha is counter
//! based, so the stream for `(master, a, b)` is fixed no matter which thread
//! or in which order it is consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Domain tags so that streams for different purposes never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    Kmc = 1,
    Init = 2,
    Training = 3,
    Epistemic = 4,
    Sampling = 5,
    Bootstrap = 6,
    Validation = 7,
}

/// Stream keyed by `(master_seed, purpose, a, b)`.
pub fn stream(master_seed: u64, purpose: Purpose, a: u32, b: u32) -> StreamRng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..12].copy_from_slice(&(purpose as u32).to_le_bytes());
    seed[12..16].copy_from_slice(&a.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(b as u64);
    rng
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform on `(0, 1]`, safe as the argument of `ln`.
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}
