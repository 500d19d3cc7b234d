//! Piecewise-linear finite elements on the periodic unit interval and the
//! coarse-graining of lattice snapshots onto them.

mod dataset;
mod estimate;

pub use estimate::statistics;

pub use dataset::{build_datasets, Datasets, EvolutionSample, OperatorSample};
pub use estimate::{
    bootstrap_standard_errors, estimate_operator, estimate_profile, macroscopic_rate,
    CoarseSnapshot, CoarseTrajectory, ProfileEstimate, BOOTSTRAP_RESAMPLES,
};

use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::linalg::SymmetricCyclic;
use crate::math;

/// `N_γ` hat functions on a uniform periodic mesh, node `i` at `i·Δx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeBasis {
    nodes: usize,
}

impl FeBasis {
    pub fn new(nodes: usize) -> Result<Self> {
        if nodes < 3 {
            return Err(config_err("finite-element basis needs at least 3 nodes"));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// `Δx = 1/N_γ`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.nodes as f64
    }

    pub fn node_position(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// `γ_i(x)` with periodic wrap.
    pub fn hat(&self, i: usize, x: f64) -> f64 {
        let mut d = math::rem_euclid(x - self.node_position(i), 1.0);
        if d > 0.5 {
            d = 1.0 - d;
        }
        (1.0 - d / self.spacing()).max(0.0_f64)
    }

    /// Value at `x` of the interpolant with nodal coefficients `coeffs`.
    pub fn interpolate(&self, coeffs: &[f64], x: f64) -> f64 {
        let s = math::rem_euclid(x, 1.0) * self.nodes as f64;
        let i = (s as usize).min(self.nodes - 1);
        let w = s - i as f64;
        (1.0 - w) * coeffs[i] + w * coeffs[(i + 1) % self.nodes]
    }

    /// Exact mass matrix: `2Δx/3` on the diagonal, `Δx/6` off it.
    pub fn mass_matrix(&self) -> SymmetricCyclic {
        let dx = self.spacing();
        SymmetricCyclic::new(
            alloc::vec![2.0 * dx / 3.0; self.nodes],
            alloc::vec![dx / 6.0; self.nodes],
        )
    }
}

/// Maps lattice occupations to nodal quantities.
///
/// `project` gives the box average over the `N/N_γ` sites centred on each
/// node. `hat_moments` gives the Riemann sums `Σ_s ε·γ_i(x_s)·η_s`, the
/// discrete inner products that enter the fluctuation estimator.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: FeBasis,
    sites: usize,
    cell: usize,
    /// Hat weights at offsets `−(c−1)..=(c−1)` from the node site.
    hat_weights: Vec<f64>,
}

impl Projector {
    pub fn new(basis: FeBasis, num_sites: usize) -> Result<Self> {
        if num_sites % basis.nodes() != 0 || num_sites < basis.nodes() {
            return Err(config_err(alloc::format!(
                "{num_sites} lattice sites are not divisible into {} finite-element cells",
                basis.nodes()
            )));
        }
        let cell = num_sites / basis.nodes();
        let c = cell as f64;
        let eps = 1.0 / num_sites as f64;
        let hat_weights = (0..2 * cell - 1)
            .map(|k| {
                let off = k as f64 - (cell - 1) as f64;
                eps * (1.0 - off.abs() / c)
            })
            .collect();
        Ok(Self {
            basis,
            sites: num_sites,
            cell,
            hat_weights,
        })
    }

    pub fn basis(&self) -> FeBasis {
        self.basis
    }

    pub fn cell_size(&self) -> usize {
        self.cell
    }

    /// Mean occupation of the cell around each node.
    pub fn project(&self, occupation: &[u8]) -> Vec<f64> {
        let (n, c) = (self.sites, self.cell);
        let start_off = c / 2;
        (0..self.basis.nodes())
            .map(|i| {
                let first = (i * c + n - start_off) % n;
                let count: u32 = (0..c).map(|k| u32::from(occupation[(first + k) % n])).sum();
                f64::from(count) / c as f64
            })
            .collect()
    }

    /// Expected [`Projector::project`] of independent occupations with
    /// `P(η_s = 1) = density(s·ε)`.
    pub fn project_density(&self, density: impl Fn(f64) -> f64) -> Vec<f64> {
        let (n, c) = (self.sites, self.cell);
        let eps = 1.0 / n as f64;
        let start_off = c / 2;
        (0..self.basis.nodes())
            .map(|i| {
                let first = (i * c + n - start_off) % n;
                (0..c)
                    .map(|k| density(((first + k) % n) as f64 * eps).clamp(0.0, 1.0))
                    .sum::<f64>()
                    / c as f64
            })
            .collect()
    }

    pub fn hat_moments(&self, occupation: &[u8]) -> Vec<f64> {
        let (n, c) = (self.sites, self.cell);
        (0..self.basis.nodes())
            .map(|i| {
                let first = (i * c + n - (c - 1)) % n;
                self.hat_weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * f64::from(occupation[(first + k) % n]))
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn mass_matrix_entries_for_25_nodes() {
        let m = FeBasis::new(25).unwrap().mass_matrix();
        assert!((m.diag[0] - 0.04 * 2.0 / 3.0).abs() < 1e-12);
        assert!((m.off[0] - 0.04 / 6.0).abs() < 1e-12);
        for s in m.row_sums() {
            assert!((s - 0.04).abs() < 1e-12);
        }
        for v in m.matvec(&[3.0; 25]) {
            assert!((v - 0.12).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_matrix_matches_quadrature_of_hats() {
        let b = FeBasis::new(7).unwrap();
        let m = b.mass_matrix();
        let q = 70_000;
        for (i, j) in [(0, 0), (0, 1), (6, 0), (3, 5)] {
            let s: f64 = (0..q)
                .map(|k| {
                    let x = (k as f64 + 0.5) / q as f64;
                    b.hat(i, x) * b.hat(j, x)
                })
                .sum::<f64>()
                / q as f64;
            assert!((s - m.get(i, j)).abs() < 1e-9, "({i},{j})");
        }
    }

    #[test]
    fn basis_needs_three_nodes() {
        assert!(FeBasis::new(2).is_err());
        assert!(Projector::new(FeBasis::new(25).unwrap(), 410).is_err());
    }

    #[test]
    fn projection_of_simple_patterns() {
        let p = Projector::new(FeBasis::new(25).unwrap(), 400).unwrap();
        assert!(p.project(&vec![1; 400]).iter().all(|&r| r == 1.0));
        assert!(p.project(&vec![0; 400]).iter().all(|&r| r == 0.0));
        let alt: Vec<u8> = (0..400).map(|s| (s % 2 == 0) as u8).collect();
        assert!(p.project(&alt).iter().all(|&r| r == 0.5));
        for m in p.hat_moments(&vec![1; 400]) {
            assert!((m - 0.04).abs() < 1e-12);
        }
    }

    #[test]
    fn density_projection_is_the_expected_occupation_projection() {
        let p = Projector::new(FeBasis::new(5).unwrap(), 20).unwrap();
        let step = |x: f64| if x < 0.5 { 1.0 } else { 0.0 };
        let occ: Vec<u8> = (0..20).map(|s| step(s as f64 / 20.0) as u8).collect();
        assert_eq!(p.project_density(step), p.project(&occ));
        let smooth = p.project_density(|x| 0.5 + 0.2 * (2.0 * core::f64::consts::PI * x).cos());
        let total: f64 = smooth.iter().sum();
        assert!((total / 5.0 - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn projection_preserves_particle_count(bits in prop::collection::vec(0u8..2, 60)) {
            let p = Projector::new(FeBasis::new(5).unwrap(), 60).unwrap();
            let rho = p.project(&bits);
            let total: f64 = rho.iter().map(|r| r * 12.0).sum();
            let count: u32 = bits.iter().map(|&b| u32::from(b)).sum();
            prop_assert!((total - f64::from(count)).abs() < 1e-9);
            prop_assert!(rho.iter().all(|r| (0.0..=1.0).contains(r)));
            // Hat moments form a partition of the particle mass.
            let moments: f64 = p.hat_moments(&bits).iter().sum();
            prop_assert!((moments - f64::from(count) / 60.0).abs() < 1e-12);
        }

        #[test]
        fn hat_moments_match_direct_riemann_sum(bits in prop::collection::vec(0u8..2, 24)) {
            let b = FeBasis::new(4).unwrap();
            let p = Projector::new(b, 24).unwrap();
            let m = p.hat_moments(&bits);
            for (i, mi) in m.iter().enumerate() {
                let direct: f64 = (0..24)
                    .map(|s| b.hat(i, s as f64 / 24.0) * f64::from(bits[s]) / 24.0)
                    .sum();
                prop_assert!((mi - direct).abs() < 1e-12);
            }
        }
    }
}
