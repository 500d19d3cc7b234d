//! One-dimensional Arrhenius lattice gas on a periodic ring.
//!
//! Sites sit at `x_s = s·ε` with `ε = 1/N`. A particle at `x` hops to an
//! empty nearest neighbour `y` at rate
//!
//! ```text
//! d · exp(−βÛ0 − Σ_{0<|r|≤L} βĴ(r) η(x + r))
//! ```
//!
//! The simulator runs in diffusive time: every rate is multiplied by `N²`,
//! so that the hydrodynamic limit on the unit interval has diffusion
//! coefficient `D = d·exp(−βÛ0)` independent of `N`.

mod kmc;
mod master;
mod profile;
mod sumtree;

pub use kmc::{run_realization, Kmc, KmcTrajectory, Snapshot, Step};
pub use master::{MasterEquation, MAX_SECTOR_STATES};
pub use profile::{sample_initial, training_profiles, InitialProfile};
pub use sumtree::SumTree;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, precondition, Result};
use crate::math;

/// Symmetric pair energies `βĴ(r)` for `1 ≤ |r| ≤ L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    /// `energies[r - 1] = βĴ(±r)`.
    energies: Vec<f64>,
}

impl Interaction {
    pub fn none() -> Self {
        Self {
            energies: Vec::new(),
        }
    }

    /// `energies[r - 1]` is the dimensionless pair energy at offset `±r`.
    pub fn symmetric(energies: Vec<f64>) -> Self {
        Self { energies }
    }

    /// Builds from a signed table `(r, βĴ(r))`. Rejects asymmetric tables;
    /// the `r = 0` entry, if present, is ignored because a site does not
    /// interact with itself.
    pub fn from_signed(table: &[(i64, f64)]) -> Result<Self> {
        let range = table
            .iter()
            .map(|(r, _)| r.unsigned_abs() as usize)
            .max()
            .unwrap_or(0);
        let mut pos = vec![0.0; range];
        let mut neg = vec![0.0; range];
        for &(r, e) in table {
            match r {
                0 => {}
                r if r > 0 => pos[r as usize - 1] = e,
                r => neg[(-r) as usize - 1] = e,
            }
        }
        if pos != neg {
            return Err(config_err("interaction table must satisfy βĴ(r) = βĴ(−r)"));
        }
        let mut energies = pos;
        while energies.last() == Some(&0.0) {
            energies.pop();
        }
        Ok(Self { energies })
    }

    /// Flat kernel `J0/(2L+1)` on `|r| ≤ L`.
    pub fn flat(range: usize, total: f64) -> Self {
        let e = total / (2 * range + 1) as f64;
        Self {
            energies: vec![e; range],
        }
    }

    pub fn nearest_neighbour(energy: f64) -> Self {
        Self {
            energies: vec![energy],
        }
    }

    /// Support radius `L_int`.
    pub fn range(&self) -> usize {
        self.energies.len()
    }

    /// `βĴ(r)`; zero outside the support and at `r = 0`.
    pub fn at(&self, r: i64) -> f64 {
        let a = r.unsigned_abs() as usize;
        if a == 0 || a > self.energies.len() {
            0.0
        } else {
            self.energies[a - 1]
        }
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn is_zero(&self) -> bool {
        self.energies.iter().all(|&e| e == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeConfig {
    pub num_sites: usize,
    pub jump_frequency: f64,
    pub binding_energy: f64,
    pub inverse_temperature: f64,
    pub interaction: Interaction,
}

impl LatticeConfig {
    pub fn new(
        num_sites: usize,
        jump_frequency: f64,
        binding_energy: f64,
        inverse_temperature: f64,
        interaction: Interaction,
    ) -> Result<Self> {
        let cfg = Self {
            num_sites,
            jump_frequency,
            binding_energy,
            inverse_temperature,
            interaction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn non_interacting(num_sites: usize) -> Self {
        Self {
            num_sites,
            jump_frequency: 1.0,
            binding_energy: 0.0,
            inverse_temperature: 1.0,
            interaction: Interaction::none(),
        }
    }

    /// Flat attractive kernel of total strength `total` spread over
    /// `2·range + 1` sites.
    pub fn long_range(num_sites: usize, range: usize, total: f64) -> Self {
        Self {
            interaction: Interaction::flat(range, total),
            ..Self::non_interacting(num_sites)
        }
    }

    pub fn short_range(num_sites: usize, energy: f64) -> Self {
        Self {
            interaction: Interaction::nearest_neighbour(energy),
            ..Self::non_interacting(num_sites)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sites < 4 {
            return Err(config_err("lattice needs at least 4 sites"));
        }
        if !(self.jump_frequency > 0.0 && self.jump_frequency.is_finite()) {
            return Err(config_err("jump frequency must be positive"));
        }
        if !self.binding_energy.is_finite() || !self.inverse_temperature.is_finite() {
            return Err(config_err(
                "binding energy and inverse temperature must be finite",
            ));
        }
        if 2 * self.interaction.range() >= self.num_sites {
            return Err(config_err("interaction range must be below N/2"));
        }
        if self.interaction.energies().iter().any(|e| !e.is_finite()) {
            return Err(config_err("interaction energies must be finite"));
        }
        Ok(())
    }

    /// Lattice spacing `ε = 1/N`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.num_sites as f64
    }

    /// `D = d·exp(−βÛ0)`.
    pub fn diffusion_coefficient(&self) -> f64 {
        self.jump_frequency * math::exp(-self.inverse_temperature * self.binding_energy)
    }

    /// Factor converting microscopic rates to the diffusive clock.
    pub fn rate_scale(&self) -> f64 {
        let n = self.num_sites as f64;
        n * n
    }

    /// Interaction field `Σ_{0<|r|≤L} βĴ(r) η(x + r)` at site `x`.
    pub fn field_at(&self, occupation: &[u8], x: usize) -> f64 {
        let n = self.num_sites;
        let mut s = 0.0;
        for (k, &e) in self.interaction.energies().iter().enumerate() {
            let r = k + 1;
            let l = occupation[(x + n - r) % n];
            let h = occupation[(x + r) % n];
            s += e * f64::from(l + h);
        }
        s
    }
}

/// Occupation vector plus clock.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub occupation: Vec<u8>,
    pub time: f64,
}

impl LatticeState {
    pub fn new(occupation: Vec<u8>) -> Self {
        Self {
            occupation,
            time: 0.0,
        }
    }

    pub fn particle_count(&self) -> usize {
        self.occupation.iter().map(|&o| o as usize).sum()
    }
}

/// Microscopic rate of the hop `x → y` (not scaled to diffusive time).
pub fn jump_rate(state: &LatticeState, x: usize, y: usize, cfg: &LatticeConfig) -> Result<f64> {
    let n = cfg.num_sites;
    if x >= n || y >= n || !((x + 1) % n == y || (y + 1) % n == x) {
        return Err(precondition(
            "jump target must be a nearest neighbour of the source",
        ));
    }
    let eta = &state.occupation;
    if eta[x] == 0 || eta[y] == 1 {
        return Ok(0.0);
    }
    let exponent = -cfg.inverse_temperature * cfg.binding_energy - cfg.field_at(eta, x);
    Ok(cfg.jump_frequency * math::exp(exponent))
}

/// Time points at which trajectories are recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSchedule {
    pub equilibration: f64,
    pub fluctuation_interval: f64,
    pub interval_count: usize,
    pub macro_interval: f64,
    pub realizations: usize,
}

impl SamplingSchedule {
    /// Desk-scale defaults in diffusive time, in units of the mean
    /// single-particle waiting time `τ = ε²/d`: equilibration `50τ`,
    /// ten fluctuation intervals of `τ/4` and `Δt = 100τ`.
    ///
    /// `h` has to stay well below `τ`: the hat functions have kinks, and
    /// over longer intervals back-and-forth hops across a kink cancel,
    /// biasing the covariation low by roughly `√(h/τ)/(N/N_γ)`.
    pub fn desk_default(cfg: &LatticeConfig, realizations: usize) -> Self {
        let eps = cfg.spacing();
        let tick = eps * eps / cfg.jump_frequency;
        Self {
            equilibration: 50.0 * tick,
            fluctuation_interval: 0.25 * tick,
            interval_count: 10,
            macro_interval: 100.0 * 0.25 * tick,
            realizations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.equilibration >= 0.0
            && self.fluctuation_interval > 0.0
            && self.interval_count >= 1
            && self.macro_interval >= 10.0 * self.fluctuation_interval
            && self.realizations >= 1
            && self.equilibration.is_finite()
            && self.macro_interval.is_finite();
        if ok {
            Ok(())
        } else {
            Err(config_err(
                "schedule needs t_eq >= 0, h > 0, N_h >= 1, Δt >= 10·h and R >= 1",
            ))
        }
    }

    /// `t0, t0 + h, …, t0 + N_h·h, t0 + Δt`, sorted with duplicates removed.
    pub fn record_times(&self) -> Vec<f64> {
        let t0 = self.equilibration;
        let mut times: Vec<f64> = (0..=self.interval_count)
            .map(|k| t0 + k as f64 * self.fluctuation_interval)
            .collect();
        times.push(t0 + self.macro_interval);
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Position of `t0 + Δt` in [`Self::record_times`].
    pub fn macro_index(&self) -> usize {
        let target = self.equilibration + self.macro_interval;
        self.record_times()
            .iter()
            .position(|&t| t == target)
            .unwrap_or(0)
    }
}
