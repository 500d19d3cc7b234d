use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{FeBasis, OperatorSample, Projector};
use crate::error::{precondition, Error, Result};
use crate::lattice::{KmcTrajectory, SamplingSchedule};
use crate::math;

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Nodal view of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseSnapshot {
    pub time: f64,
    /// Box-projected density.
    pub rho: Vec<f64>,
    /// Riemann-sum inner products with each hat function.
    pub hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoarseTrajectory {
    pub snapshots: Vec<CoarseSnapshot>,
}

impl CoarseSnapshot {
    pub fn from_occupation(time: f64, occupation: &[u8], projector: &Projector) -> Self {
        Self {
            time,
            rho: projector.project(occupation),
            hat: projector.hat_moments(occupation),
        }
    }
}

impl CoarseTrajectory {
    pub fn from_kmc(traj: &KmcTrajectory, projector: &Projector) -> Self {
        let snapshots = traj
            .records
            .iter()
            .map(|r| CoarseSnapshot::from_occupation(r.time, &r.occupation, projector))
            .collect();
        Self { snapshots }
    }

    fn at(&self, t: f64) -> Result<&CoarseSnapshot> {
        let tol = 1e-12 * t.abs().max(1e-300);
        self.snapshots
            .iter()
            .find(|s| (s.time - t).abs() <= tol)
            .ok_or(Error::MissingSnapshot(t))
    }
}

/// Estimated operator, macroscopic rate and mean field at `t0` for one
/// initial profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEstimate {
    pub profile: usize,
    /// Mean projected density at `t0`.
    pub field: Vec<f64>,
    pub operator: Vec<OperatorSample>,
    /// `Δρ_i/Δt`.
    pub rate: Vec<f64>,
}

/// Mean of `pick(trajectory)` over realizations.
fn ensemble_mean<'a>(
    trajs: &[&'a CoarseTrajectory],
    pick: impl Fn(&'a CoarseTrajectory) -> Result<&'a [f64]>,
) -> Result<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    for t in trajs {
        let v = pick(t)?;
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let r = trajs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= r);
    Ok(acc)
}

/// Full `N_γ × N_γ` covariation matrix (row-major) of the rescaled hat
/// fluctuations, averaged over the `N_h` consecutive intervals.
fn covariation(
    trajs: &[&CoarseTrajectory],
    schedule: &SamplingSchedule,
    spacing: f64,
) -> Result<Vec<f64>> {
    if trajs.len() < 2 {
        return Err(Error::TooFewRealizations(trajs.len()));
    }
    if schedule.interval_count < 1 || schedule.fluctuation_interval <= 0.0 {
        return Err(precondition("estimator needs N_h >= 1 and h > 0"));
    }
    let h = schedule.fluctuation_interval;
    let t0 = schedule.equilibration;
    let m = trajs[0].snapshots.first().map_or(0, |s| s.hat.len());
    let r = trajs.len() as f64;
    let mut k = vec![0.0; m * m];
    let mut incs: Vec<Vec<f64>> = vec![vec![0.0; m]; trajs.len()];
    for step in 0..schedule.interval_count {
        let ta = t0 + step as f64 * h;
        let tb = t0 + (step + 1) as f64 * h;
        for (inc, traj) in incs.iter_mut().zip(trajs) {
            let a = &traj.at(ta)?.hat;
            let b = &traj.at(tb)?.hat;
            for ((d, x), y) in inc.iter_mut().zip(a).zip(b) {
                *d = y - x;
            }
        }
        let mut mean = vec![0.0; m];
        for inc in &incs {
            for (s, d) in mean.iter_mut().zip(inc) {
                *s += d / r;
            }
        }
        for inc in &incs {
            for i in 0..m {
                let di = inc[i] - mean[i];
                if di == 0.0 {
                    continue;
                }
                for j in 0..m {
                    k[i * m + j] += di * (inc[j] - mean[j]);
                }
            }
        }
    }
    // ΔY = ΔW/√ε, averaged over R realizations and N_h intervals, over 2h.
    let norm = 1.0 / (2.0 * h * spacing * r * schedule.interval_count as f64);
    k.iter_mut().for_each(|x| *x *= norm);
    Ok(k)
}

/// Fluctuation–dissipation estimate of the tridiagonal operator entries for
/// one profile, one sample per node (its diagonal entry and right edge),
/// with the stencil taken from the mean field at `t0`.
pub fn estimate_operator(
    trajs: &[CoarseTrajectory],
    basis: &FeBasis,
    schedule: &SamplingSchedule,
    spacing: f64,
) -> Result<Vec<OperatorSample>> {
    let refs: Vec<&CoarseTrajectory> = trajs.iter().collect();
    let field = ensemble_mean(&refs, |t| Ok(&t.at(schedule.equilibration)?.rho[..]))?;
    operator_samples(&refs, basis, schedule, spacing, &field)
}

fn operator_samples(
    trajs: &[&CoarseTrajectory],
    basis: &FeBasis,
    schedule: &SamplingSchedule,
    spacing: f64,
    field: &[f64],
) -> Result<Vec<OperatorSample>> {
    let m = basis.nodes();
    let k = covariation(trajs, schedule, spacing)?;
    Ok((0..m)
        .map(|i| {
            let l = (i + m - 1) % m;
            let r = (i + 1) % m;
            OperatorSample {
                z_left: field[l],
                z_mid: field[i],
                z_right: field[r],
                k0: k[i * m + i],
                k1: k[i * m + r],
            }
        })
        .collect())
}

/// `(mean ρ(t0 + Δt) − mean ρ(t0))/Δt` per node.
pub fn macroscopic_rate(
    trajs: &[CoarseTrajectory],
    schedule: &SamplingSchedule,
) -> Result<Vec<f64>> {
    let refs: Vec<&CoarseTrajectory> = trajs.iter().collect();
    rate_of(&refs, schedule)
}

fn rate_of(trajs: &[&CoarseTrajectory], schedule: &SamplingSchedule) -> Result<Vec<f64>> {
    if trajs.is_empty() {
        return Err(Error::TooFewRealizations(0));
    }
    if schedule.macro_interval <= 0.0 {
        return Err(precondition("macroscopic interval must be positive"));
    }
    let t0 = schedule.equilibration;
    let t1 = t0 + schedule.macro_interval;
    let a = ensemble_mean(trajs, |t| Ok(&t.at(t0)?.rho[..]))?;
    let b = ensemble_mean(trajs, |t| Ok(&t.at(t1)?.rho[..]))?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (y - x) / schedule.macro_interval)
        .collect())
}

/// Everything the dataset builder needs from one profile's realizations.
pub fn estimate_profile(
    trajs: &[CoarseTrajectory],
    basis: &FeBasis,
    schedule: &SamplingSchedule,
    spacing: f64,
    profile: usize,
) -> Result<ProfileEstimate> {
    let refs: Vec<&CoarseTrajectory> = trajs.iter().collect();
    let field = ensemble_mean(&refs, |t| Ok(&t.at(schedule.equilibration)?.rho[..]))?;
    let operator = operator_samples(&refs, basis, schedule, spacing, &field)?;
    let rate = rate_of(&refs, schedule)?;
    Ok(ProfileEstimate {
        profile,
        field,
        operator,
        rate,
    })
}

/// Bootstrap standard error of each component of `statistic`, resampling
/// realizations with replacement.
pub fn bootstrap_standard_errors<R: Rng + ?Sized>(
    trajs: &[CoarseTrajectory],
    resamples: usize,
    rng: &mut R,
    statistic: impl Fn(&[&CoarseTrajectory]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if trajs.len() < 2 || resamples < 2 {
        return Err(Error::TooFewRealizations(trajs.len()));
    }
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    let mut pick: Vec<&CoarseTrajectory> = Vec::with_capacity(trajs.len());
    for _ in 0..resamples {
        pick.clear();
        pick.extend((0..trajs.len()).map(|_| &trajs[rng.random_range(0..trajs.len())]));
        let s = statistic(&pick)?;
        if sum.is_empty() {
            sum = vec![0.0; s.len()];
            sum_sq = vec![0.0; s.len()];
        }
        for ((a, b), x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&s) {
            *a += x;
            *b += x * x;
        }
    }
    let n = resamples as f64;
    Ok(sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| math::sqrt(((q - s * s / n) / (n - 1.0)).max(0.0)))
        .collect())
}

/// Statistics used with [`bootstrap_standard_errors`].
pub mod statistics {
    use super::*;

    /// Three-point operator row sums `K1_left + K0 + K1_right` per node.
    pub fn operator_row_sums(
        schedule: &SamplingSchedule,
        spacing: f64,
    ) -> impl Fn(&[&CoarseTrajectory]) -> Result<Vec<f64>> + '_ {
        move |trajs| {
            let k = covariation(trajs, schedule, spacing)?;
            let m = math::sqrt(k.len() as f64) as usize;
            Ok((0..m)
                .map(|i| k[i * m + (i + m - 1) % m] + k[i * m + i] + k[i * m + (i + 1) % m])
                .collect())
        }
    }

    /// `Σ_j (M·Δρ/Δt)_j`, a single component.
    pub fn total_mass_rate<'s>(
        schedule: &'s SamplingSchedule,
        basis: &'s FeBasis,
    ) -> impl Fn(&[&CoarseTrajectory]) -> Result<Vec<f64>> + 's {
        move |trajs| {
            let rate = rate_of(trajs, schedule)?;
            Ok(vec![basis.mass_matrix().matvec(&rate).iter().sum()])
        }
    }
}
