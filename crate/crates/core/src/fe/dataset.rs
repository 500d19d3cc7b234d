use alloc::vec::Vec;

use super::{FeBasis, ProfileEstimate};

/// Element of the operator dataset: the stencil `(z_{i−1}, z_i, z_{i+1})`,
/// the diagonal entry `K0` at node `i` and the off-diagonal `K1` on the
/// edge `(i, i+1)`. The left edge `(z_{i−1}, z_i)` is implied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSample {
    pub z_left: f64,
    pub z_mid: f64,
    pub z_right: f64,
    pub k0: f64,
    pub k1: f64,
}

impl OperatorSample {
    pub fn left_edge(&self) -> (f64, f64) {
        (self.z_left, self.z_mid)
    }

    pub fn right_edge(&self) -> (f64, f64) {
        (self.z_mid, self.z_right)
    }
}

/// Element of the evolution dataset for node `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionSample {
    pub node: usize,
    /// `Σ_i ⟨γ_j,γ_i⟩·Δρ_i/Δt`.
    pub b: f64,
    /// `⟨γ_j, K γ_i⟩` for `i = j−1, j, j+1`.
    pub k_row: [f64; 3],
    /// Field values at nodes `j−1, j, j+1`.
    pub z: [f64; 3],
    /// Auxiliary denoising target; equal to `b` as built.
    pub upsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Datasets {
    pub k1: Vec<OperatorSample>,
    pub f: Vec<EvolutionSample>,
}

impl Datasets {
    pub fn operator_count(&self) -> usize {
        self.k1.len()
    }

    pub fn evolution_count(&self) -> usize {
        self.f.len()
    }
}

/// Flattens per-profile estimates in `(profile, node)` order. Operator rows
/// in the evolution set start out as the raw estimator values; the free
/// energy stage replaces them with learned ones.
pub fn build_datasets(estimates: &[ProfileEstimate], basis: &FeBasis) -> Datasets {
    let m = basis.nodes();
    let mass = basis.mass_matrix();
    let mut out = Datasets::default();
    for est in estimates {
        let b = mass.matvec(&est.rate);
        for j in 0..m {
            let l = (j + m - 1) % m;
            let r = (j + 1) % m;
            let op = &est.operator[j];
            out.f.push(EvolutionSample {
                node: j,
                b: b[j],
                k_row: [est.operator[l].k1, op.k0, op.k1],
                z: [est.field[l], est.field[j], est.field[r]],
                upsilon: b[j],
            });
        }
        out.k1.extend_from_slice(&est.operator);
    }
    out
}
