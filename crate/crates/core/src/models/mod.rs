//! Conditional diffusion models for the operator entry `K1` and the free
//! energy density, operator assembly, and a deterministic baseline.
//!
//! Both diffusion models predict a clean standardized target from its
//! noised value, the diffusion step (Fourier-embedded) and a physical
//! condition. Deterministic predictions run the `η = 0` sampler from the
//! mode `y_Ω = 0` of the starting distribution, so one condition maps to
//! one value.

mod baseline;
mod free_energy;
mod k1;
mod operator;
pub mod transform;

pub use baseline::{train_baseline, BaselineConfig, BaselineModel, NoiseLevel};
pub use free_energy::{train_f, train_f_on_rows, FModel, FPass, REFERENCE_DENSITY};
pub use k1::{train_k1, K1Model, K1Pass};
pub use operator::{assemble_operator, refresh_operator_rows};
pub use transform::{g, g_inverse, g_slope, k0_from_k1};

use crate::error::{config_err, Result};

/// Start of every deterministic reverse chain.
pub const CHAIN_START: f64 = 0.0;

/// Architecture and optimization settings of a base diffusion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `Ω`.
    pub diffusion_steps: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Strided sampler length used for predictions.
    pub sample_steps: usize,
}

impl BaseConfig {
    pub fn k1_default() -> Self {
        Self {
            epochs: 20_000,
            learning_rate: 1e-4,
            diffusion_steps: 50,
            hidden_width: 50,
            hidden_layers: 3,
            sample_steps: 2,
        }
    }

    pub fn f_default() -> Self {
        Self {
            learning_rate: 1e-3,
            ..Self::k1_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.diffusion_steps == 0 || self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(config_err(
                "diffusion steps and hidden sizes must be positive",
            ));
        }
        if self.sample_steps == 0 || self.sample_steps > self.diffusion_steps {
            return Err(config_err("sample steps must lie in 1..=Ω"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning rate must be positive"));
        }
        Ok(())
    }
}

pub(crate) fn clamp_unit(x: f64, what: &str) -> f64 {
    if (0.0..=1.0).contains(&x) {
        x
    } else {
        log::warn!("{what} = {x} outside [0, 1]; clamped");
        x.clamp(0.0, 1.0)
    }
}
