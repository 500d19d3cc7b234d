use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::error::{precondition, Result};
use crate::math;

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// `β_ω`, `α_ω = 1 − β_ω` and `ᾱ_ω = Π_{l≤ω} α_l` for `ω = 0..=Ω`, with
/// `β_0 = 0` and `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// From `β_1..β_Ω`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(precondition("every β must lie in (0, 1)"));
        }
        let mut beta = Vec::with_capacity(betas.len() + 1);
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        beta.push(0.0);
        alpha_bar.push(1.0);
        for &b in betas {
            beta.push(b);
            alpha_bar.push(alpha_bar[alpha_bar.len() - 1] * (1.0 - b));
        }
        Ok(Self { beta, alpha_bar })
    }

    /// `Ω`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, omega: usize) -> f64 {
        self.beta[omega]
    }

    pub fn alpha(&self, omega: usize) -> f64 {
        1.0 - self.beta[omega]
    }

    pub fn alpha_bar(&self, omega: usize) -> f64 {
        self.alpha_bar[omega]
    }

    /// `β_1..β_Ω`.
    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    /// Posterior variance of the ancestral sampler,
    /// `(1−ᾱ_{ω−1})/(1−ᾱ_ω)·β_ω`.
    pub fn ddpm_variance(&self, omega: usize) -> f64 {
        (1.0 - self.alpha_bar[omega - 1]) / (1.0 - self.alpha_bar[omega]) * self.beta[omega]
    }
}

/// Cosine schedule with offset `s = 0.008` and `β ≤ 0.999`.
pub fn cosine_schedule(steps: usize) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(precondition("diffusion needs at least one step"));
    }
    let f = |w: usize| {
        let c = math::cos(
            (w as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2,
        );
        c * c
    };
    let f0 = f(0);
    let betas: Vec<f64> = (1..=steps)
        .map(|w| (1.0 - (f(w) / f0) / (f(w - 1) / f0)).clamp(1e-12, MAX_BETA))
        .collect();
    DiffusionSchedule::from_betas(&betas)
}
