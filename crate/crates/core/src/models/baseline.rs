//! Deterministic physics-informed baseline: plain MLPs for `K1` and `f`
//! trained on the same datasets, with the evolution residual weighted by
//! its expected estimator variance.

use alloc::vec::Vec;

use rand::Rng;

use super::clamp_unit;
use super::transform::{g, g_inverse, g_slope, k0_from_k1};
use crate::diffusion::{train_loop, Standardizer};
use crate::error::{config_err, Error, Result};
use crate::fe::{EvolutionSample, OperatorSample};
use crate::nn::{Mlp, MlpSpec, TangentTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub k1_epochs: usize,
    pub f_epochs: usize,
    pub learning_rate: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            k1_epochs: 6000,
            f_epochs: 2000,
            learning_rate: 1e-2,
            hidden_width: 20,
            hidden_layers: 2,
        }
    }
}

impl BaselineConfig {
    /// Settings for the reduced-realization scenario.
    pub fn noisier() -> Self {
        Self {
            f_epochs: 2500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(config_err("baseline hidden sizes must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("baseline learning rate must be positive"));
        }
        Ok(())
    }
}

/// Sampling parameters that set the evolution-residual variance
/// `σ²_j = 2ε·K_jj/(R·Δt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub realizations: usize,
    pub macro_interval: f64,
    /// Lattice spacing `ε`.
    pub spacing: f64,
}

impl NoiseLevel {
    pub fn variance(&self, k_jj: f64) -> f64 {
        2.0 * self.spacing * k_jj / (self.realizations as f64 * self.macro_interval)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    /// `[z_a, z_b] → standardized raw K1`.
    pub k1_net: Mlp,
    pub raw: Standardizer,
    /// `ρ → f`.
    pub f_net: Mlp,
}

const VARIANCE_FLOOR: f64 = 1e-12;

impl BaselineModel {
    pub fn k1(&self, za: f64, zb: f64) -> Result<f64> {
        let za = clamp_unit(za, "baseline K1 condition");
        let zb = clamp_unit(zb, "baseline K1 condition");
        Ok(g(self.raw.inverse(self.k1_net.eval(&[za, zb])?[0])))
    }

    /// `(f, Q)` at `ρ`.
    pub fn predict_f(&self, rho: f64) -> Result<(f64, f64)> {
        let rho = clamp_unit(rho, "density");
        let mut tt = self.f_net.tangent_trace();
        self.f_net.forward_tangent(&[rho], &[1.0], &mut tt)?;
        Ok((tt.output()[0], tt.output_tangent()[0]))
    }
}

/// Trains the baseline `K1` network, rebuilds the evolution operator rows
/// from it, then trains `f` on the variance-weighted residual. Returns the
/// model and both loss histories.
pub fn train_baseline<R: Rng>(
    d_k1: &[OperatorSample],
    d_f: &[EvolutionSample],
    cfg: &BaselineConfig,
    noise: NoiseLevel,
    rng: &mut R,
) -> Result<(BaselineModel, Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    if d_k1.is_empty() {
        return Err(Error::EmptyDataset("operator samples"));
    }
    if d_f.is_empty() {
        return Err(Error::EmptyDataset("evolution samples"));
    }
    let raw_targets: Vec<f64> = d_k1.iter().map(|s| g_inverse(s.k1)).collect();
    let raw = Standardizer::fit(&raw_targets);
    let mut k1_net = Mlp::xavier(
        MlpSpec::uniform(2, cfg.hidden_width, cfg.hidden_layers, 1)?,
        rng,
    );
    let inv_n = 1.0 / d_k1.len() as f64;
    let mut left = k1_net.trace();
    let mut right = k1_net.trace();
    let k1_history = train_loop(
        "baseline K1",
        &mut k1_net,
        cfg.k1_epochs,
        cfg.learning_rate,
        |_, net, grad| {
            let mut loss = 0.0;
            for s in d_k1 {
                net.forward(&[s.z_left, s.z_mid], &mut left)?;
                net.forward(&[s.z_mid, s.z_right], &mut right)?;
                let rl = raw.inverse(left.output()[0]);
                let rr = raw.inverse(right.output()[0]);
                let closure = -g(rl) - g(rr) - s.k0;
                let fit = g(rr) - s.k1;
                loss += (closure * closure + fit * fit) * inv_n;
                let dl = -2.0 * closure * inv_n;
                let dr = (-2.0 * closure + 2.0 * fit) * inv_n;
                net.backward(&mut left, &[dl * g_slope(rl) * raw.scale], grad, None)?;
                net.backward(&mut right, &[dr * g_slope(rr) * raw.scale], grad, None)?;
            }
            Ok(loss)
        },
    )?;

    let mut model = BaselineModel {
        k1_net,
        raw,
        f_net: Mlp::xavier(
            MlpSpec::uniform(1, cfg.hidden_width, cfg.hidden_layers, 1)?,
            rng,
        ),
    };
    let mut rows = Vec::with_capacity(d_f.len());
    let mut floored = 0usize;
    for s in d_f {
        let kl = model.k1(s.z[0], s.z[1])?;
        let kr = model.k1(s.z[1], s.z[2])?;
        let k_row = [kl, k0_from_k1(kl, kr), kr];
        let mut var = noise.variance(k_row[1]);
        if !(var > VARIANCE_FLOOR) {
            floored += 1;
            var = VARIANCE_FLOOR;
        }
        rows.push((s, k_row, 1.0 / var));
    }
    if floored > 0 {
        log::warn!("baseline: {floored} residual variances floored at {VARIANCE_FLOOR}");
    }

    let half_inv_n = 0.5 / d_f.len() as f64;
    let mut net = core::mem::replace(
        &mut model.f_net,
        Mlp::zeros(MlpSpec::new(alloc::vec![1, 1, 1])?),
    );
    let mut traces: [TangentTrace; 3] = core::array::from_fn(|_| net.tangent_trace());
    let f_history = train_loop(
        "baseline f",
        &mut net,
        cfg.f_epochs,
        cfg.learning_rate,
        |_, net, grad| {
            let mut loss = 0.0;
            for (s, k_row, weight) in &rows {
                let mut residual = s.b;
                for (i, tt) in traces.iter_mut().enumerate() {
                    net.forward_tangent(&[s.z[i]], &[1.0], tt)?;
                    residual += k_row[i] * tt.output_tangent()[0];
                }
                loss += residual * residual * weight * half_inv_n;
                let cot = 2.0 * residual * weight * half_inv_n;
                for (i, tt) in traces.iter_mut().enumerate() {
                    net.backward_tangent(tt, &[0.0], &[cot * k_row[i]], grad, None)?;
                }
            }
            Ok(loss)
        },
    )?;
    model.f_net = net;
    Ok((model, k1_history, f_history))
}
