use alloc::vec::Vec;

use super::transform::k0_from_k1;
use crate::error::Result;
use crate::fe::EvolutionSample;
use crate::linalg::SymmetricCyclic;

/// Periodic tridiagonal operator with `K1` on each edge `(i, i+1)` taken
/// from `k1(ρ_i, ρ_{i+1})` and the diagonal closing every row to zero.
pub fn assemble_operator(
    rho: &[f64],
    mut k1: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<SymmetricCyclic> {
    let n = rho.len();
    let off = (0..n)
        .map(|i| k1(rho[i], rho[(i + 1) % n]))
        .collect::<Result<Vec<_>>>()?;
    let diag = (0..n)
        .map(|i| k0_from_k1(off[(i + n - 1) % n], off[i]))
        .collect();
    Ok(SymmetricCyclic::new(diag, off))
}

/// Replaces the operator row of every evolution sample with one built from
/// `k1`: `[K1(z₋,z₀), −K1(z₋,z₀) − K1(z₀,z₊), K1(z₀,z₊)]`.
pub fn refresh_operator_rows(
    samples: &mut [EvolutionSample],
    mut k1: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<()> {
    for s in samples {
        let left = k1(s.z[0], s.z[1])?;
        let right = k1(s.z[1], s.z[2])?;
        s.k_row = [left, k0_from_k1(left, right), right];
    }
    Ok(())
}
