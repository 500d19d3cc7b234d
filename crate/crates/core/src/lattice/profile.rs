use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use super::{LatticeConfig, LatticeState};
use crate::error::{config_err, Result};
use crate::math;

/// Initial density `ρ(x) = ρ_ave − A·cos(4πfx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialProfile {
    pub frequency: u32,
    pub amplitude: f64,
    pub mean: f64,
}

impl InitialProfile {
    pub fn new(frequency: u32, amplitude: f64, mean: f64) -> Result<Self> {
        let p = Self {
            frequency,
            amplitude,
            mean,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.frequency >= 1
            && self.amplitude > 0.0
            && self.amplitude < 0.5
            && self.mean - self.amplitude > 0.0
            && self.mean + self.amplitude < 1.0;
        if ok {
            Ok(())
        } else {
            Err(config_err(
                "profile needs f >= 1, 0 < A < 0.5 and 0 < ρ_ave ± A < 1",
            ))
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.mean - self.amplitude * math::cos(4.0 * PI * self.frequency as f64 * x)
    }

    /// Row `label` (1-based, 1..=28) of the standard training set: four
    /// groups of seven cosine profiles.
    pub fn table(label: usize) -> Option<Self> {
        if !(1..=28).contains(&label) {
            return None;
        }
        let group = (label - 1) / 7;
        let i = ((label - 1) % 7 + 1) as f64;
        let sign = if (label - 1) % 7 % 2 == 0 { -1.0 } else { 1.0 }; // (−1)^i
        let p = match group {
            0 => {
                let a = 0.05 + 0.03 * i;
                Self {
                    frequency: 1,
                    amplitude: a,
                    mean: 0.5 - sign * 0.6 * (0.5 - a),
                }
            }
            1 => Self {
                frequency: 1,
                amplitude: 0.31,
                mean: 0.272 + 0.057 * i,
            },
            2 => {
                let a = 0.04 + 0.03 * i;
                Self {
                    frequency: 2,
                    amplitude: a,
                    mean: 0.5 + sign * 0.84 * (0.5 - a),
                }
            }
            _ => Self {
                frequency: 2,
                amplitude: 0.29,
                mean: 0.272 + 0.057 * i,
            },
        };
        Some(p)
    }
}

/// The first `count` rows of the standard table.
pub fn training_profiles(count: usize) -> Vec<InitialProfile> {
    (1..=count.min(28))
        .filter_map(InitialProfile::table)
        .collect()
}

/// Independent Bernoulli occupation with `P(η_s = 1) = ρ(s·ε)`.
pub fn sample_initial<R: Rng + ?Sized>(
    profile: &InitialProfile,
    cfg: &LatticeConfig,
    rng: &mut R,
) -> LatticeState {
    let eps = cfg.spacing();
    let occupation = (0..cfg.num_sites)
        .map(|s| {
            let p = profile.density(s as f64 * eps).clamp(0.0, 1.0);
            u8::from(rng.random::<f64>() < p)
        })
        .collect();
    LatticeState::new(occupation)
}
