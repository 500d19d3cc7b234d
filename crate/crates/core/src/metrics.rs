//! Error and coverage measures.

use alloc::vec::Vec;

use crate::continuum::EnsembleResult;
use crate::error::{precondition, Error, Result};

/// `‖pred − ref‖₂ / ‖ref‖₂`; zero when both vanish.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Shape {
            context: "relative L2 error",
            expected: reference.len(),
            got: pred.len(),
        });
    }
    let num: f64 = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum();
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(libm::sqrt(num / den))
}

/// Spatial relative L2 error at each output time, maximized over time.
pub fn dynamics_max_rl2e(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(precondition(
            "trajectories must have the same non-zero number of snapshots",
        ));
    }
    pred.iter()
        .zip(reference)
        .try_fold(0.0f64, |m, (p, r)| Ok(m.max(relative_l2(p, r)?)))
}

/// Fraction of validation values inside `[ci_lo, ci_hi]`. `validation[k]`
/// is the field at the ensemble's `k`-th output time.
pub fn ci_coverage(ensemble: &EnsembleResult, validation: &[Vec<f64>]) -> Result<f64> {
    if validation.len() != ensemble.times.len() {
        return Err(Error::Shape {
            context: "coverage snapshots",
            expected: ensemble.times.len(),
            got: validation.len(),
        });
    }
    let (mut inside, mut total) = (0usize, 0usize);
    for ((lo, hi), v) in ensemble.ci_lo.iter().zip(&ensemble.ci_hi).zip(validation) {
        if v.len() != lo.len() {
            return Err(Error::Shape {
                context: "coverage field",
                expected: lo.len(),
                got: v.len(),
            });
        }
        for ((l, h), x) in lo.iter().zip(hi).zip(v) {
            total += 1;
            inside += usize::from(l <= x && x <= h);
        }
    }
    if total == 0 {
        return Err(precondition("no validation points"));
    }
    Ok(inside as f64 / total as f64)
}
