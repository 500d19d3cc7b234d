//! Long-time prediction with the learned gradient flow.
//!
//! On the finite-element mesh the evolution reads `M ρ̇ = −K(ρ)·Q(ρ)`, with
//! `M` the mass matrix, `K` the assembled dissipative operator and `Q` the
//! nodal driving force. Integration is classical RK4. Ensembles draw one
//! epistemic index pair per member and keep it for the whole trajectory.

use alloc::vec;
use alloc::vec::Vec;

use crate::epinet::{sample_functions, EpinetScratch, EpistemicModel, PreparedFeatures};
use crate::error::{config_err, precondition, Error, Result};
use crate::fe::FeBasis;
use crate::linalg::SymmetricCyclic;
use crate::lrm::LrmConfig;
use crate::models::{assemble_operator, g, BaselineModel, FModel, K1Model};
use crate::nn::TangentTrace;
use crate::rng::{stream, Purpose};

pub const DEFAULT_DT: f64 = 8e-5;
pub const GRID_POINTS: usize = 201;
pub const DEFAULT_REALIZATIONS: usize = 2000;
/// `ρ_r0 = ρ_r1`.
pub const CALIBRATION_DENSITY: f64 = 0.5;
/// Largest tolerated share of ensemble members with non-finite fields.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// A discrete gradient-flow model: operator and driving force as
/// functions of the nodal densities.
pub trait FlowModel {
    fn operator(&self, rho: &[f64]) -> Result<SymmetricCyclic>;
    fn force(&self, rho: &[f64]) -> Result<Vec<f64>>;
}

impl FlowModel for LrmConfig {
    fn operator(&self, rho: &[f64]) -> Result<SymmetricCyclic> {
        Ok(LrmConfig::operator(self, rho))
    }

    fn force(&self, rho: &[f64]) -> Result<Vec<f64>> {
        Ok(self.driving_force(rho))
    }
}

/// Local closure: `K1` from the edge pair, `Q` from the nodal density.
#[derive(Debug, Clone, Copy)]
pub struct LocalFlow<K, Q> {
    pub k1: K,
    pub q: Q,
}

impl<K, Q> FlowModel for LocalFlow<K, Q>
where
    K: Fn(f64, f64) -> Result<f64>,
    Q: Fn(f64) -> Result<f64>,
{
    fn operator(&self, rho: &[f64]) -> Result<SymmetricCyclic> {
        assemble_operator(rho, |a, b| (self.k1)(a, b))
    }

    fn force(&self, rho: &[f64]) -> Result<Vec<f64>> {
        rho.iter().map(|&r| (self.q)(r)).collect()
    }
}

/// The deterministic base models as a flow.
pub fn base_flow<'a>(
    k1: &'a K1Model,
    f: &'a FModel,
) -> LocalFlow<impl Fn(f64, f64) -> Result<f64> + 'a, impl Fn(f64) -> Result<f64> + 'a> {
    LocalFlow {
        k1: move |a, b| k1.predict(a, b),
        q: move |r| Ok(f.predict(r)?.1),
    }
}

pub fn baseline_flow(
    model: &BaselineModel,
) -> LocalFlow<impl Fn(f64, f64) -> Result<f64> + '_, impl Fn(f64) -> Result<f64> + '_> {
    LocalFlow {
        k1: move |a, b| model.k1(a, b),
        q: move |r| Ok(model.predict_f(r)?.1),
    }
}

/// Values on `points` uniform nodes of `[0, 1]`, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1 {
    values: Vec<f64>,
}

impl Table1 {
    pub fn tabulate(points: usize, mut f: impl FnMut(f64) -> Result<f64>) -> Result<Self> {
        if points < 2 {
            return Err(config_err("interpolation grid needs at least 2 points"));
        }
        let h = 1.0 / (points - 1) as f64;
        Ok(Self {
            values: (0..points)
                .map(|i| f(i as f64 * h))
                .collect::<Result<_>>()?,
        })
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(config_err("interpolation grid needs at least 2 points"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (i, w) = cell(self.values.len(), x);
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

/// Values on a `points × points` grid of `[0, 1]²` (row index = first
/// argument), bilinearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct Table2 {
    points: usize,
    values: Vec<f64>,
}

impl Table2 {
    pub fn tabulate(points: usize, mut f: impl FnMut(f64, f64) -> Result<f64>) -> Result<Self> {
        if points < 2 {
            return Err(config_err("interpolation grid needs at least 2 points"));
        }
        let h = 1.0 / (points - 1) as f64;
        let mut values = Vec::with_capacity(points * points);
        for i in 0..points {
            for j in 0..points {
                values.push(f(i as f64 * h, j as f64 * h)?);
            }
        }
        Ok(Self { points, values })
    }

    pub fn from_values(points: usize, values: Vec<f64>) -> Result<Self> {
        if points < 2 || values.len() != points * points {
            return Err(config_err(
                "2D interpolation table needs points² values, points ≥ 2",
            ));
        }
        Ok(Self { points, values })
    }

    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let n = self.points;
        let (i, u) = cell(n, a);
        let (j, v) = cell(n, b);
        let at = |i: usize, j: usize| self.values[i * n + j];
        (1.0 - u) * ((1.0 - v) * at(i, j) + v * at(i, j + 1))
            + u * ((1.0 - v) * at(i + 1, j) + v * at(i + 1, j + 1))
    }
}

/// Cell index and local coordinate of `x` (clamped to `[0, 1]`).
fn cell(points: usize, x: f64) -> (usize, f64) {
    let s = x.clamp(0.0, 1.0) * (points - 1) as f64;
    let i = (s as usize).min(points - 2);
    (i, s - i as f64)
}

/// Flow read from interpolation tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedFlow {
    pub k1: Table2,
    pub q: Table1,
}

impl TabulatedFlow {
    pub fn tabulate(
        points: usize,
        k1: impl FnMut(f64, f64) -> Result<f64>,
        q: impl FnMut(f64) -> Result<f64>,
    ) -> Result<Self> {
        Ok(Self {
            k1: Table2::tabulate(points, k1)?,
            q: Table1::tabulate(points, q)?,
        })
    }
}

impl FlowModel for TabulatedFlow {
    fn operator(&self, rho: &[f64]) -> Result<SymmetricCyclic> {
        assemble_operator(rho, |a, b| Ok(self.k1.eval(a, b)))
    }

    fn force(&self, rho: &[f64]) -> Result<Vec<f64>> {
        Ok(rho.iter().map(|&r| self.q.eval(r)).collect())
    }
}

/// Affine gauge fixing `f̄(ρ) = f(ρ) − f(ρ_r0) − f′(ρ_r1)·(ρ − ρ_r0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub r0: f64,
    pub value_at_r0: f64,
    pub slope_at_r1: f64,
}

impl Calibration {
    /// `f` returns `(f(ρ), f′(ρ))`.
    pub fn new(f: impl Fn(f64) -> Result<(f64, f64)>, r0: f64, r1: f64) -> Result<Self> {
        Ok(Self {
            r0,
            value_at_r0: f(r0)?.0,
            slope_at_r1: f(r1)?.1,
        })
    }

    pub fn apply(&self, rho: f64, (f, q): (f64, f64)) -> (f64, f64) {
        (
            f - self.value_at_r0 - self.slope_at_r1 * (rho - self.r0),
            q - self.slope_at_r1,
        )
    }
}

/// Calibrated version of `f`, again returning `(f̄, f̄′)`.
pub fn calibrate_f<F>(f: F, r0: f64, r1: f64) -> Result<impl Fn(f64) -> Result<(f64, f64)>>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    let cal = Calibration::new(&f, r0, r1)?;
    Ok(move |rho| Ok(cal.apply(rho, f(rho)?)))
}

/// `Σ_j Δx·f(ρ_j)`.
pub fn free_energy_functional(
    f: impl Fn(f64) -> Result<f64>,
    rho: &[f64],
    spacing: f64,
) -> Result<f64> {
    Ok(spacing * rho.iter().map(|&r| f(r)).sum::<Result<f64>>()?)
}

/// Snapshots of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `states[k]` is the field at `times[k]`.
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }
}

/// One classical RK4 step.
pub fn rk4_step(
    rhs: &mut impl FnMut(&[f64]) -> Result<Vec<f64>>,
    y: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let shifted =
        |k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = rhs(y)?;
    let k2 = rhs(&shifted(&k1, h / 2.0))?;
    let k3 = rhs(&shifted(&k2, h / 2.0))?;
    let k4 = rhs(&shifted(&k3, h))?;
    Ok((0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrates from `t = 0` and records the state at each output time.
/// Between consecutive outputs the interval is split into equal steps no
/// longer than `dt`, so every output time is hit exactly.
pub fn rk4_integrate(
    mut rhs: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    y0: &[f64],
    dt: f64,
    output_times: &[f64],
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(config_err("time step must be positive"));
    }
    if output_times.iter().any(|t| !(*t >= 0.0 && t.is_finite()))
        || output_times.windows(2).any(|w| w[1] < w[0])
    {
        return Err(precondition(
            "output times must be finite, non-negative and sorted",
        ));
    }
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut states = Vec::with_capacity(output_times.len());
    for &target in output_times {
        let span = target - t;
        let steps = libm::ceil(span / dt - 1e-9).max(0.0) as usize;
        if steps > 0 {
            let h = span / steps as f64;
            for k in 0..steps {
                y = rk4_step(&mut rhs, &y, h)?;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState(t + (k + 1) as f64 * h));
                }
            }
        }
        t = target;
        states.push(y.clone());
    }
    Ok(Trajectory {
        times: output_times.to_vec(),
        states,
    })
}

/// `M ρ̇ = −K(ρ)·Q(ρ)` on a fixed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSystem {
    mass: SymmetricCyclic,
    pub dt: f64,
}

impl OdeSystem {
    pub fn new(basis: &FeBasis, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(config_err("time step must be positive"));
        }
        Ok(Self {
            mass: basis.mass_matrix(),
            dt,
        })
    }

    pub fn nodes(&self) -> usize {
        self.mass.dim()
    }

    pub fn mass(&self) -> &SymmetricCyclic {
        &self.mass
    }

    pub fn rhs(&self, model: &(impl FlowModel + ?Sized), rho: &[f64]) -> Result<Vec<f64>> {
        if rho.len() != self.nodes() {
            return Err(Error::Shape {
                context: "density field",
                expected: self.nodes(),
                got: rho.len(),
            });
        }
        let q = model.force(rho)?;
        let neg_kq: Vec<f64> = model.operator(rho)?.matvec(&q).iter().map(|v| -v).collect();
        self.mass.solve(&neg_kq)
    }

    pub fn integrate(
        &self,
        model: &(impl FlowModel + ?Sized),
        rho0: &[f64],
        output_times: &[f64],
    ) -> Result<Trajectory> {
        rk4_integrate(|rho| self.rhs(model, rho), rho0, self.dt, output_times)
    }
}

/// `k` equally spaced output times on `[0, t_end]`, both ends included.
pub fn output_times(t_end: f64, intervals: usize) -> Vec<f64> {
    let k = intervals.max(1);
    (0..=k).map(|i| t_end * i as f64 / k as f64).collect()
}

/// Per-point statistics of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    /// `[member][time][node]`, excluded members removed.
    pub members: Vec<Vec<Vec<f64>>>,
    /// `[time][node]` fields.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub ci_lo: Vec<Vec<f64>>,
    pub ci_hi: Vec<Vec<f64>>,
    pub excluded: usize,
}

/// Linear-interpolation percentile of sorted data, `p ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = (pos as usize).min(sorted.len() - 1);
    let w = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + w * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl EnsembleResult {
    /// Aggregates member runs. Members that failed with a non-finite field
    /// are dropped and counted; more than 1% of them is an error, as is any
    /// other failure.
    pub fn aggregate(times: Vec<f64>, runs: Vec<Result<Trajectory>>) -> Result<Self> {
        let total = runs.len();
        let mut members = Vec::with_capacity(total);
        let mut excluded = 0;
        for run in runs {
            match run {
                Ok(t) => members.push(t.states),
                Err(Error::NonFiniteState(_)) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
        if excluded > 0 {
            log::warn!("ensemble: excluded {excluded} of {total} members with non-finite fields");
        }
        if members.is_empty() || excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
            return Err(Error::TooManyExclusions { excluded, total });
        }
        let n = members.len() as f64;
        let nodes = members[0].first().map_or(0, Vec::len);
        let field = || vec![vec![0.0; nodes]; times.len()];
        let (mut mean, mut std, mut ci_lo, mut ci_hi) = (field(), field(), field(), field());
        let mut column = Vec::with_capacity(members.len());
        for k in 0..times.len() {
            for j in 0..nodes {
                column.clear();
                column.extend(members.iter().map(|m| m[k][j]));
                column.sort_by(f64::total_cmp);
                // Clamped so rounding cannot push the mean of equal values
                // off the values themselves.
                let mu =
                    (column.iter().sum::<f64>() / n).clamp(column[0], column[column.len() - 1]);
                let var = column.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                mean[k][j] = mu;
                std[k][j] = libm::sqrt(var);
                // The percentile band is widened to the mean when a skewed
                // column would otherwise leave it outside.
                ci_lo[k][j] = percentile(&column, 0.025).min(mu);
                ci_hi[k][j] = percentile(&column, 0.975).max(mu);
            }
        }
        Ok(Self {
            times,
            members,
            mean,
            std,
            ci_lo,
            ci_hi,
            excluded,
        })
    }
}

/// Epistemic indices of ensemble member `member`, from two independent
/// streams.
pub fn member_indices(
    seed: u64,
    member: usize,
    k1_dim: usize,
    f_dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut rk = stream(seed, Purpose::Sampling, 0, member as u32);
    let mut rf = stream(seed, Purpose::Sampling, 1, member as u32);
    (
        sample_functions(k1_dim, 1, &mut rk).remove(0),
        sample_functions(f_dim, 1, &mut rf).remove(0),
    )
}

struct ForcePoint {
    q: f64,
    features: Vec<f64>,
    tangent: Vec<f64>,
    prior: Vec<f64>,
    prior_tangent: Vec<f64>,
}

/// Base predictions of an epistemic model on the interpolation grids,
/// computed once and shared by every ensemble member.
pub struct EnnGrid<'a> {
    model: &'a EpistemicModel,
    points: usize,
    k1_raw: Vec<f64>,
    k1_prepared: Vec<PreparedFeatures>,
    force: Vec<ForcePoint>,
}

impl core::fmt::Debug for EnnGrid<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("EnnGrid")
            .field("points", &self.points)
            .finish_non_exhaustive()
    }
}

impl<'a> EnnGrid<'a> {
    pub fn new(model: &'a EpistemicModel, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(config_err("interpolation grid needs at least 2 points"));
        }
        let h = 1.0 / (points - 1) as f64;
        let mut k1_raw = Vec::with_capacity(points * points);
        let mut k1_prepared = Vec::with_capacity(points * points);
        for i in 0..points {
            for j in 0..points {
                let pass = model.k1.pass(i as f64 * h, j as f64 * h)?;
                k1_prepared.push(model.k1_epinet.prepare(&pass.features)?);
                k1_raw.push(pass.raw);
            }
        }
        let mut tt = TangentTrace::default();
        let force = (0..points)
            .map(|i| {
                let pass = model.f.pass(i as f64 * h)?;
                let (mut prior, mut prior_tangent) = (Vec::new(), Vec::new());
                for p in &model.f_epinet.priors {
                    p.forward_tangent(&pass.features, &pass.feature_tangent, &mut tt)?;
                    prior.push(tt.output()[0]);
                    prior_tangent.push(tt.output_tangent()[0]);
                }
                Ok(ForcePoint {
                    q: pass.q,
                    features: pass.features,
                    tangent: pass.feature_tangent,
                    prior,
                    prior_tangent,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            points,
            k1_raw,
            k1_prepared,
            force,
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn index_dims(&self) -> (usize, usize) {
        (
            self.model.k1_epinet.index_dim(),
            self.model.f_epinet.index_dim(),
        )
    }

    /// The base models without epistemic correction.
    pub fn base(&self) -> Result<TabulatedFlow> {
        Ok(TabulatedFlow {
            k1: Table2::from_values(self.points, self.k1_raw.iter().map(|&r| g(r)).collect())?,
            q: Table1::from_values(self.force.iter().map(|p| p.q).collect())?,
        })
    }

    /// The function sample selected by `(φ_K1, φ_f)`.
    pub fn member(&self, phi_k1: &[f64], phi_f: &[f64]) -> Result<TabulatedFlow> {
        let net = &self.model.k1_epinet;
        let part = net.index_part(phi_k1)?;
        let mut scratch = EpinetScratch::default();
        let k1 = self
            .k1_raw
            .iter()
            .zip(&self.k1_prepared)
            .map(|(&raw, p)| g(raw + net.output_prepared(p, &part, phi_k1, &mut scratch)))
            .collect();

        let fnet = &self.model.f_epinet;
        let kappa = fnet.prior_scale;
        let mut input = Vec::new();
        let mut dir = Vec::new();
        let mut tt = TangentTrace::default();
        let q = self
            .force
            .iter()
            .map(|p| {
                input.clear();
                input.extend_from_slice(&p.features);
                input.extend_from_slice(phi_f);
                dir.clear();
                dir.extend_from_slice(&p.tangent);
                dir.extend(core::iter::repeat(0.0).take(phi_f.len()));
                fnet.learnable.forward_tangent(&input, &dir, &mut tt)?;
                let learned: f64 = tt
                    .output_tangent()
                    .iter()
                    .zip(phi_f)
                    .map(|(a, b)| a * b)
                    .sum();
                let prior: f64 = p.prior_tangent.iter().zip(phi_f).map(|(a, b)| a * b).sum();
                Ok(p.q + kappa * prior + learned)
            })
            .collect::<Result<_>>()?;
        Ok(TabulatedFlow {
            k1: Table2::from_values(self.points, k1)?,
            q: Table1::from_values(q)?,
        })
    }

    /// Free-energy sample `f̃(ρ)` of a member at the grid nodes.
    pub fn member_free_energy(&self, phi_f: &[f64]) -> Result<Vec<f64>> {
        let fnet = &self.model.f_epinet;
        let h = 1.0 / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                Ok(self.model.f.pass(i as f64 * h)?.f
                    + fnet.output(&self.force[i].features, phi_f)?)
            })
            .collect()
    }

    /// Prior values at the force grid, for consistency checks.
    pub fn force_prior(&self, i: usize) -> &[f64] {
        &self.force[i].prior
    }
}

/// Integrates `members` function samples from `rho0` sequentially; see
/// [`member_indices`] for the index streams.
pub fn ensemble_predict(
    grid: &EnnGrid<'_>,
    system: &OdeSystem,
    rho0: &[f64],
    times: &[f64],
    members: usize,
    seed: u64,
) -> Result<EnsembleResult> {
    ensemble_predict_with(grid, system, rho0, times, members, seed, |m, run| {
        (0..m).map(run).collect()
    })
}

/// [`ensemble_predict`] with the member loop delegated to `map`, which
/// must return the runs for members `0..m` in order. Each run depends only
/// on its member index, so `map` is free to evaluate them concurrently.
pub fn ensemble_predict_with<M>(
    grid: &EnnGrid<'_>,
    system: &OdeSystem,
    rho0: &[f64],
    times: &[f64],
    members: usize,
    seed: u64,
    map: M,
) -> Result<EnsembleResult>
where
    M: FnOnce(usize, &(dyn Fn(usize) -> Result<Trajectory> + Sync)) -> Vec<Result<Trajectory>>,
{
    let (dk, df) = grid.index_dims();
    let run = |m: usize| {
        let (pk, pf) = member_indices(seed, m, dk, df);
        let flow = grid.member(&pk, &pf)?;
        system.integrate(&flow, rho0, times)
    };
    let runs = map(members, &run);
    if runs.len() != members {
        return Err(Error::Shape {
            context: "ensemble runs",
            expected: members,
            got: runs.len(),
        });
    }
    EnsembleResult::aggregate(times.to_vec(), runs)
}
