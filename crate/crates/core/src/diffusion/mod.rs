//! Denoising diffusion machinery for scalar targets.
//!
//! Networks predict the clean (standardized) target from its noised
//! version, the diffusion step and a conditioning vector. Sampling starts
//! from standard normal noise and walks a strided subset of steps with the
//! generalized (DDIM) update; `η = 1` with the full step set is the
//! ancestral (DDPM) sampler.

mod harness;
mod schedule;

pub use harness::{draw_noised, train_loop, NoisedSample, Standardizer};
pub use schedule::{cosine_schedule, DiffusionSchedule};

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{precondition, Result};
use crate::math;
use crate::rng::normal;

/// `y_ω = √ᾱ_ω·y0 + √(1−ᾱ_ω)·noise`.
pub fn forward_noise(y0: f64, omega: usize, sched: &DiffusionSchedule, noise: f64) -> f64 {
    let ab = sched.alpha_bar(omega);
    math::sqrt(ab) * y0 + math::sqrt(1.0 - ab) * noise
}

/// Ancestral step `ω → ω−1` with an explicit standard normal draw. The
/// noise term is dropped at `ω = 1`.
pub fn ddpm_step(y: f64, y_hat: f64, omega: usize, sched: &DiffusionSchedule, noise: f64) -> f64 {
    let ab = sched.alpha_bar(omega);
    let ab_prev = sched.alpha_bar(omega - 1);
    let beta = sched.beta(omega);
    let alpha = sched.alpha(omega);
    let mean = math::sqrt(ab_prev) * beta / (1.0 - ab) * y_hat
        + math::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab) * y;
    if omega > 1 {
        mean + math::sqrt(sched.ddpm_variance(omega)) * noise
    } else {
        mean
    }
}

pub fn ddpm_update<R: Rng + ?Sized>(
    y: f64,
    y_hat: f64,
    omega: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> f64 {
    ddpm_step(y, y_hat, omega, sched, normal(rng))
}

/// Generalized step `ω → prev` (`prev < ω`, `prev = 0` meaning clean) with
/// an explicit standard normal draw:
///
/// ```text
/// σ² = η²·(1−ᾱ_prev)/(1−ᾱ_ω)·(1 − ᾱ_ω/ᾱ_prev)
/// y' = √ᾱ_prev·ŷ + √(1−ᾱ_prev−σ²)·(y − √ᾱ_ω·ŷ)/√(1−ᾱ_ω) + σ·noise
/// ```
pub fn ddim_step(
    y: f64,
    y_hat: f64,
    omega: usize,
    prev: usize,
    sched: &DiffusionSchedule,
    eta: f64,
    noise: f64,
) -> f64 {
    let ab = sched.alpha_bar(omega);
    let ab_prev = sched.alpha_bar(prev);
    let var = ddim_variance(omega, prev, sched, eta);
    let eps_hat = (y - math::sqrt(ab) * y_hat) / math::sqrt(1.0 - ab);
    let dir = math::sqrt((1.0 - ab_prev - var).max(0.0));
    let mut out = math::sqrt(ab_prev) * y_hat + dir * eps_hat;
    if var > 0.0 {
        out += math::sqrt(var) * noise;
    }
    out
}

pub fn ddim_variance(omega: usize, prev: usize, sched: &DiffusionSchedule, eta: f64) -> f64 {
    let ab = sched.alpha_bar(omega);
    let ab_prev = sched.alpha_bar(prev);
    eta * eta * (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)
}

pub fn ddim_update<R: Rng + ?Sized>(
    y: f64,
    y_hat: f64,
    omega: usize,
    prev: usize,
    sched: &DiffusionSchedule,
    eta: f64,
    rng: &mut R,
) -> f64 {
    let noise = if eta > 0.0 { normal(rng) } else { 0.0 };
    ddim_step(y, y_hat, omega, prev, sched, eta, noise)
}

/// `n` steps spaced uniformly from `Ω` down to 1, always containing both
/// ends when `n ≥ 2`.
pub fn strided_steps(total: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > total {
        return Err(precondition("sampling needs 1 <= n_steps <= Ω"));
    }
    if n == 1 {
        return Ok(alloc::vec![total]);
    }
    let mut steps: Vec<usize> = (0..n)
        .map(|k| {
            let t = total as f64 - k as f64 * (total - 1) as f64 / (n - 1) as f64;
            math::round(t) as usize
        })
        .collect();
    steps.dedup();
    Ok(steps)
}

/// Two-dimensional Fourier embedding of the diffusion step.
pub fn fourier_embed(omega: usize, total: usize) -> [f64; 2] {
    let phase = 2.0 * PI * omega as f64 / total as f64;
    [math::sin(phase), math::cos(phase)]
}

/// A model that predicts the clean standardized target.
pub trait Denoiser {
    fn denoise(&self, condition: &[f64], y: f64, omega: usize) -> Result<f64>;
}

/// Runs the strided sampler and returns the denoised prediction at the last
/// visited step. With `η = 0` the result is deterministic given `y_Ω`.
pub fn sample_from<D: Denoiser + ?Sized>(
    model: &D,
    condition: &[f64],
    sched: &DiffusionSchedule,
    steps: &[usize],
    eta: f64,
    y_start: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut y = y_start;
    let mut y_hat = 0.0;
    for (k, &omega) in steps.iter().enumerate() {
        y_hat = model.denoise(condition, y, omega)?;
        let prev = steps.get(k + 1).copied().unwrap_or(0);
        if prev > 0 {
            y = ddim_update(y, y_hat, omega, prev, sched, eta, rng);
        }
    }
    Ok(y_hat)
}

/// Draws `y_Ω ~ N(0, 1)` and samples over `n_steps` strided steps.
pub fn sample<D: Denoiser + ?Sized>(
    model: &D,
    condition: &[f64],
    sched: &DiffusionSchedule,
    n_steps: usize,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let steps = strided_steps(sched.steps(), n_steps)?;
    let y0 = normal(rng);
    sample_from(model, condition, sched, &steps, eta, y0, rng)
}
