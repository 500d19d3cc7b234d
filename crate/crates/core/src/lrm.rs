//! Analytic long-range continuum model of the Arrhenius lattice gas.
//!
//! The density follows the gradient flow
//!
//! ```text
//! ∂ρ/∂t = ∇·(m ∇ δF/δρ),   F[ρ] = ∫ −½ρ(J*ρ) + ρ ln ρ + (1−ρ) ln(1−ρ)
//! m = D·ρ(1−ρ)·exp(−J*ρ)
//! ```
//!
//! discretized on the finite-element nodes with midpoint mobility on each
//! edge. The convolution is evaluated at node resolution with weights that
//! integrate the lattice kernel against the hat functions, which keeps the
//! total interaction strength `Σ_r βĴ(r)` exact on coarse grids.

use alloc::vec;
use alloc::vec::Vec;

use crate::continuum::{OdeSystem, Trajectory};
use crate::error::{config_err, Result};
use crate::fe::FeBasis;
use crate::lattice::LatticeConfig;
use crate::linalg::SymmetricCyclic;
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct LrmConfig {
    diffusion: f64,
    /// `kernel[m]` weights `ρ_{i−m}` in `(J*ρ)_i`; periodic in `m`.
    kernel: Vec<f64>,
    spacing: f64,
}

impl LrmConfig {
    pub fn new(diffusion: f64, kernel: Vec<f64>) -> Result<Self> {
        let n = kernel.len();
        if !(diffusion > 0.0 && diffusion.is_finite()) {
            return Err(config_err("LRM diffusion coefficient must be positive"));
        }
        if n < 3 {
            return Err(config_err("LRM needs at least 3 nodes"));
        }
        for m in 1..n {
            if (kernel[m] - kernel[n - m]).abs() > 1e-12 * kernel[m].abs().max(1.0) {
                return Err(config_err("LRM kernel must be symmetric"));
            }
        }
        Ok(Self {
            diffusion,
            kernel,
            spacing: 1.0 / n as f64,
        })
    }

    pub fn non_interacting(diffusion: f64, nodes: usize) -> Result<Self> {
        Self::new(diffusion, vec![0.0; nodes])
    }

    /// Continuum model of a lattice configuration on `basis`:
    /// `W_m = Σ_r βĴ(r)·γ_0(r·ε − m·Δx)`.
    pub fn from_lattice(cfg: &LatticeConfig, basis: &FeBasis) -> Result<Self> {
        let n = basis.nodes();
        let eps = cfg.spacing();
        let dx = basis.spacing();
        let mut kernel = vec![0.0; n];
        let range = cfg.interaction.range() as i64;
        for r in -range..=range {
            let e = cfg.interaction.at(r);
            if e == 0.0 {
                continue;
            }
            // Position in units of Δx, wrapped to [0, n).
            let u = math::rem_euclid(r as f64 * eps / dx, n as f64);
            let lo = math::floor(u);
            let frac = u - lo;
            let lo = lo as usize % n;
            kernel[lo] += e * (1.0 - frac);
            kernel[(lo + 1) % n] += e * frac;
        }
        Self::new(cfg.diffusion_coefficient(), kernel)
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    pub fn nodes(&self) -> usize {
        self.kernel.len()
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// `Σ_m W_m`, the convolution of a constant unit field.
    pub fn total_interaction(&self) -> f64 {
        self.kernel.iter().sum()
    }

    /// `(J*ρ)_i = Σ_m W_m ρ_{i−m}`.
    pub fn convolve(&self, rho: &[f64]) -> Vec<f64> {
        let n = self.nodes();
        (0..n)
            .map(|i| {
                self.kernel
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(m, w)| w * rho[(i + n - m) % n])
                    .sum()
            })
            .collect()
    }

    pub fn mobility(&self, rho: f64, conv: f64) -> f64 {
        self.diffusion * rho * (1.0 - rho) * math::exp(-conv)
    }

    /// `Q = −J*ρ − ln(1/ρ − 1)` at every node.
    pub fn driving_force(&self, rho: &[f64]) -> Vec<f64> {
        self.convolve(rho)
            .iter()
            .zip(rho)
            .map(|(&c, &r)| local_force(r, c))
            .collect()
    }

    /// `F = Δx·Σ_i f(ρ_i, (J*ρ)_i)`.
    pub fn free_energy(&self, rho: &[f64]) -> f64 {
        let conv = self.convolve(rho);
        self.spacing
            * rho
                .iter()
                .zip(&conv)
                .map(|(&r, &c)| free_energy_density(r, c))
                .sum::<f64>()
    }

    /// `K1` on every edge `(i, i+1)`: `−m(ρ_{i+½})/Δx` with midpoint
    /// density and convolution.
    pub fn edge_k1(&self, rho: &[f64]) -> Vec<f64> {
        let n = self.nodes();
        let conv = self.convolve(rho);
        (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                let mid = 0.5 * (rho[i] + rho[j]);
                let cmid = 0.5 * (conv[i] + conv[j]);
                -self.mobility(mid, cmid) / self.spacing
            })
            .collect()
    }

    pub fn operator(&self, rho: &[f64]) -> SymmetricCyclic {
        let n = self.nodes();
        let k1 = self.edge_k1(rho);
        let diag = (0..n).map(|i| -k1[(i + n - 1) % n] - k1[i]).collect();
        SymmetricCyclic::new(diag, k1)
    }

    /// Integrates the reference dynamics from `rho0` with RK4.
    pub fn evolve(&self, rho0: &[f64], output_times: &[f64], dt: f64) -> Result<Trajectory> {
        let system = OdeSystem::new(&FeBasis::new(self.nodes())?, dt)?;
        system.integrate(self, rho0, output_times)
    }

    /// `K1` at a uniform density.
    pub fn uniform_k1(&self, rho: f64) -> f64 {
        -self.mobility(rho, self.total_interaction() * rho) / self.spacing
    }

    /// Local free-energy density at a uniform density,
    /// `−½J_tot·ρ² + ρ ln ρ + (1−ρ) ln(1−ρ)`.
    pub fn uniform_free_energy(&self, rho: f64) -> f64 {
        free_energy_density(rho, self.total_interaction() * rho)
    }

    /// Derivative of [`Self::uniform_free_energy`].
    pub fn uniform_force(&self, rho: f64) -> f64 {
        local_force(rho, self.total_interaction() * rho)
    }
}

/// `−½ρ·conv + ρ ln ρ + (1−ρ) ln(1−ρ)`.
pub fn free_energy_density(rho: f64, conv: f64) -> f64 {
    -0.5 * rho * conv + math::xlnx(rho) + math::xlnx(1.0 - rho)
}

/// `−conv − ln(1/ρ − 1)`.
pub fn local_force(rho: f64, conv: f64) -> f64 {
    -conv + math::ln(rho) - math::ln(1.0 - rho)
}

/// `∂Q/∂ρ` of the entropic part, `1/ρ + 1/(1−ρ)`.
pub fn entropic_stiffness(rho: f64) -> f64 {
    1.0 / (rho * (1.0 - rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{LN_2, PI};

    fn heat() -> LrmConfig {
        LrmConfig::non_interacting(1.0, 64).unwrap()
    }

    #[test]
    fn free_energy_examples() {
        assert!((free_energy_density(0.5, 0.0) + LN_2).abs() < 1e-15);
        for r in [0.1, 0.23, 0.4] {
            assert!(
                (free_energy_density(r, 0.0) - free_energy_density(1.0 - r, 0.0)).abs() < 1e-14
            );
        }
        assert!(free_energy_density(1e-12, 0.0).abs() < 1e-9);
        assert!(free_energy_density(1.0 - 1e-12, 0.0).abs() < 1e-9);
    }

    #[test]
    fn driving_force_examples() {
        let m = heat();
        assert!(m.driving_force(&[0.5; 64]).iter().all(|q| q.abs() < 1e-15));
        for r in [0.05, 0.3, 0.45, 0.8] {
            assert!((local_force(1.0 - r, 0.0) + local_force(r, 0.0)).abs() < 1e-13);
            let h = 1e-6;
            let fd = (local_force(r + h, 0.0) - local_force(r - h, 0.0)) / (2.0 * h);
            assert!((fd - entropic_stiffness(r)).abs() / entropic_stiffness(r) < 1e-6);
        }
    }

    #[test]
    fn mobility_examples() {
        let m = LrmConfig::non_interacting(2.0, 10).unwrap();
        assert_eq!(m.mobility(0.0, 0.0), 0.0);
        assert_eq!(m.mobility(1.0, 0.0), 0.0);
        assert!((m.mobility(0.5, 0.0) - 0.5).abs() < 1e-15);
        for k in 1..1000 {
            let r = k as f64 / 1000.0;
            let id = m.mobility(r, 0.0) * entropic_stiffness(r);
            assert!((id - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_operator_entries() {
        let m = LrmConfig::non_interacting(1.0, 25).unwrap();
        let k1 = m.edge_k1(&[0.5; 25]);
        assert!(k1.iter().all(|&k| (k + 6.25).abs() < 1e-12));
        let op = m.operator(&[0.5; 25]);
        assert!(op.row_sums().iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn lattice_kernel_keeps_total_strength() {
        let cfg = LatticeConfig::long_range(400, 20, 1.0);
        let basis = FeBasis::new(25).unwrap();
        let m = LrmConfig::from_lattice(&cfg, &basis).unwrap();
        let total: f64 = cfg.interaction.energies().iter().sum::<f64>() * 2.0;
        assert!((m.total_interaction() - total).abs() < 1e-12);
        let k = m.kernel();
        for i in 1..25 {
            assert!((k[i] - k[25 - i]).abs() < 1e-14);
        }
        let conv = m.convolve(&[0.3; 25]);
        assert!(conv.iter().all(|c| (c - 0.3 * total).abs() < 1e-12));
    }

    #[test]
    fn asymmetric_kernel_is_rejected() {
        assert!(LrmConfig::new(1.0, vec![0.0, 1.0, 0.0, 0.0]).is_err());
        assert!(LrmConfig::new(0.0, vec![0.0; 4]).is_err());
    }

    #[test]
    fn heat_operator_matches_spectral_rhs() {
        // For J ≡ 0 the discrete flow is linear: M ρ̇ = −K Q with
        // K·Q = D·(stiffness)·ρ. Compare the mass-lumped rate against the
        // exact second derivative of a single Fourier mode.
        let m = heat();
        let basis = FeBasis::new(64).unwrap();
        let amp = 1e-3;
        let rho: Vec<f64> = (0..64)
            .map(|i| 0.5 + amp * (2.0 * PI * basis.node_position(i)).cos())
            .collect();
        let k = m.operator(&rho);
        let kq = k.matvec(&m.driving_force(&rho));
        let rate = basis
            .mass_matrix()
            .solve(&kq.iter().map(|v| -v).collect::<Vec<_>>())
            .unwrap();
        let exact: Vec<f64> = rho
            .iter()
            .map(|r| -(2.0 * PI).powi(2) * (r - 0.5))
            .collect();
        let num: f64 = rate.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = exact.iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() < 1e-3, "{}", (num / den).sqrt());
    }
    fn cosine(n: usize, mean: f64, amp: f64, freq: f64) -> Vec<f64> {
        (0..n)
            .map(|i| mean - amp * (4.0 * PI * freq * i as f64 / n as f64).cos())
            .collect()
    }

    #[test]
    fn uniform_state_is_stationary() {
        let m = LrmConfig::new(0.8, {
            let mut k = vec![0.0; 25];
            k[0] = 0.5;
            k[1] = 0.25;
            k[24] = 0.25;
            k
        })
        .unwrap();
        let tr = m.evolve(&[0.37; 25], &[0.0, 0.01], 8e-5).unwrap();
        assert!(tr.last().iter().all(|&r| (r - 0.37).abs() < 1e-14));
    }

    #[test]
    fn small_cosine_decays_at_heat_rate() {
        let n = 50;
        let m = LrmConfig::non_interacting(1.0, n).unwrap();
        let t = 2e-3;
        let tr = m
            .evolve(&cosine(n, 0.5, 0.01, 1.0), &[0.0, t], 8e-5)
            .unwrap();
        let amp = 0.5 - tr.last()[0];
        let expect = 0.01 * (-(4.0 * PI).powi(2) * t).exp();
        assert!((amp / expect - 1.0).abs() < 0.01, "{amp} vs {expect}");
    }

    #[test]
    fn free_energy_decreases_along_trajectory() {
        let m = LrmConfig::new(1.0, {
            let mut k = vec![0.0; 25];
            for r in [0usize, 1, 2, 23, 24] {
                k[r] = 0.2;
            }
            k
        })
        .unwrap();
        let times: Vec<f64> = (0..=40).map(|k| k as f64 * 2.5e-4).collect();
        let tr = m.evolve(&cosine(25, 0.4, 0.2, 1.0), &times, 8e-5).unwrap();
        let energy: Vec<f64> = tr.states.iter().map(|s| m.free_energy(s)).collect();
        for w in energy.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn non_interacting_dynamics_mirror_under_particle_hole_swap() {
        let m = LrmConfig::non_interacting(1.0, 25).unwrap();
        let rho0 = cosine(25, 0.35, 0.2, 1.0);
        let hole: Vec<f64> = rho0.iter().map(|r| 1.0 - r).collect();
        let a = m.evolve(&rho0, &[0.0, 0.005], 8e-5).unwrap();
        let b = m.evolve(&hole, &[0.0, 0.005], 8e-5).unwrap();
        for (x, y) in a.last().iter().zip(b.last()) {
            assert!((x + y - 1.0).abs() < 1e-10);
        }
    }
}
