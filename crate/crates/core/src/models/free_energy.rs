use alloc::vec::Vec;

use rand::Rng;

use super::operator::refresh_operator_rows;
use super::{clamp_unit, BaseConfig, K1Model};
use crate::diffusion::{
    cosine_schedule, draw_noised, fourier_embed, sample, train_loop, Denoiser, DiffusionSchedule,
    Standardizer,
};
use crate::error::{Error, Result};
use crate::fe::EvolutionSample;
use crate::nn::{Mlp, MlpSpec, TangentTrace};

/// Density at which every predicted free energy is pinned to zero.
pub const REFERENCE_DENSITY: f64 = 0.5;

/// Eight-point Gauss-Hermite rule for the standard normal.
const HERMITE_NODES: [f64; 8] = [
    -4.1445471861258945,
    -2.8024858612875416,
    -1.636519042435108,
    -0.5390798113513751,
    0.5390798113513751,
    1.636519042435108,
    2.8024858612875416,
    4.1445471861258945,
];
const HERMITE_WEIGHTS: [f64; 8] = [
    0.00011261453837536762,
    0.009635220120788256,
    0.11723990766175904,
    0.3730122576790773,
    0.3730122576790773,
    0.11723990766175904,
    0.009635220120788256,
    0.00011261453837536762,
];

/// Conditional model with two heads on `[ρ, y, sin, cos]`: the free energy
/// density `f̂` and the denoised auxiliary target `Υ̂`. The driving force
/// is the density derivative of `f̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct FModel {
    pub net: Mlp,
    pub schedule: DiffusionSchedule,
    /// Standardization of the auxiliary target.
    pub target: Standardizer,
    pub sample_steps: usize,
}

/// Deterministic prediction at one density.
#[derive(Debug, Clone, PartialEq)]
pub struct FPass {
    pub f: f64,
    /// `df/dρ`.
    pub q: f64,
    /// Last hidden layer followed by `ρ`.
    pub features: Vec<f64>,
    /// `d(features)/dρ`.
    pub feature_tangent: Vec<f64>,
}

impl FModel {
    fn input(&self, rho: f64, y: f64, omega: usize) -> [f64; 4] {
        let [s, c] = fourier_embed(omega, self.schedule.steps());
        [rho, y, s, c]
    }

    pub fn feature_dim(&self) -> usize {
        self.net.spec().last_hidden_dim() + 1
    }

    /// Weight of step `ω` in the readout: the noise fraction `1 − ᾱ_ω` of
    /// the auxiliary input.
    fn step_weight(&self, omega: usize) -> f64 {
        1.0 - self.schedule.alpha_bar(omega)
    }

    /// Free-energy head averaged over the auxiliary input. The residual
    /// loss sees `f̂` only at noised copies of `Υ = b_j`, and close to
    /// `ω = 0` these carry the measured rate itself, so a point readout
    /// there picks up whatever noise in `b_j` the network learned to
    /// explain through `y`. Averaging over `y ~ N(0, 1)` (the standardized
    /// marginal of every `y_ω`) and over `ω` weighted by the noise fraction
    /// removes that channel. The value at [`REFERENCE_DENSITY`] is
    /// subtracted.
    pub fn pass(&self, rho: f64) -> Result<FPass> {
        let rho = clamp_unit(rho, "density");
        let mut tt = self.net.tangent_trace();
        let hidden = self.net.spec().last_hidden_dim();
        let (mut f, mut q, mut f_ref, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut features = alloc::vec![0.0; hidden];
        let mut feature_tangent = alloc::vec![0.0; hidden];
        for omega in 1..=self.schedule.steps() {
            let w_step = self.step_weight(omega);
            for (&y, &w_node) in HERMITE_NODES.iter().zip(&HERMITE_WEIGHTS) {
                let w = w_step * w_node;
                self.net.forward_tangent(
                    &self.input(rho, y, omega),
                    &[1.0, 0.0, 0.0, 0.0],
                    &mut tt,
                )?;
                f += w * tt.output()[0];
                q += w * tt.output_tangent()[0];
                for (a, v) in features.iter_mut().zip(tt.last_hidden()) {
                    *a += w * v;
                }
                for (a, v) in feature_tangent.iter_mut().zip(tt.last_hidden_tangent()) {
                    *a += w * v;
                }
                f_ref += w * self.net.eval(&self.input(REFERENCE_DENSITY, y, omega))?[0];
                total += w;
            }
        }
        let inv = 1.0 / total;
        features
            .iter_mut()
            .chain(feature_tangent.iter_mut())
            .for_each(|v| *v *= inv);
        features.push(rho);
        feature_tangent.push(1.0);
        Ok(FPass {
            f: (f - f_ref) * inv,
            q: q * inv,
            features,
            feature_tangent,
        })
    }

    /// `(f, Q)` at `ρ`.
    pub fn predict(&self, rho: f64) -> Result<(f64, f64)> {
        let p = self.pass(rho)?;
        Ok((p.f, p.q))
    }

    /// One stochastic draw of the auxiliary target in physical units.
    pub fn sample_auxiliary<R: Rng>(
        &self,
        rho: f64,
        n_steps: usize,
        eta: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let y = sample(self, &[rho], &self.schedule, n_steps, eta, rng)?;
        Ok(self.target.inverse(y))
    }
}

impl Denoiser for FModel {
    fn denoise(&self, condition: &[f64], y: f64, omega: usize) -> Result<f64> {
        Ok(self.net.eval(&self.input(condition[0], y, omega))?[1])
    }
}

/// Recomputes the operator rows of `data` with the trained `K1` model and
/// trains the free-energy model on them.
pub fn train_f<R: Rng>(
    data: &[EvolutionSample],
    k1: &K1Model,
    cfg: &BaseConfig,
    rng: &mut R,
) -> Result<(FModel, Vec<f64>)> {
    let mut rows = data.to_vec();
    refresh_operator_rows(&mut rows, |a, b| k1.predict(a, b))?;
    train_f_on_rows(&rows, cfg, rng)
}

/// Trains on the operator rows stored in `data`:
///
/// ```text
/// |(b_j + Σ_i k_i·∂f̂/∂ρ(z_i, y_ω, ω))/s|² + |Υ̂(z_j, y_ω, ω) − Υ|²
/// ```
///
/// with `s` the spread of `Υ` so both terms are measured in standardized
/// units, and one `(ω, y_ω)` per sample and epoch shared by the three
/// stencil nodes.
pub fn train_f_on_rows<R: Rng>(
    data: &[EvolutionSample],
    cfg: &BaseConfig,
    rng: &mut R,
) -> Result<(FModel, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("evolution samples"));
    }
    let ups: Vec<f64> = data.iter().map(|s| s.upsilon).collect();
    let target = Standardizer::fit(&ups);
    let clean: Vec<f64> = ups.iter().map(|&u| target.forward(u)).collect();
    let spec = MlpSpec::uniform(4, cfg.hidden_width, cfg.hidden_layers, 2)?;
    let mut model = FModel {
        net: Mlp::xavier(spec, rng),
        schedule: cosine_schedule(cfg.diffusion_steps)?,
        target,
        sample_steps: cfg.sample_steps,
    };
    let mut net = core::mem::replace(
        &mut model.net,
        Mlp::zeros(MlpSpec::new(alloc::vec![1, 1, 1])?),
    );
    let inv_n = 1.0 / data.len() as f64;
    let inv_s = 1.0 / target.scale;
    let mut noised = Vec::with_capacity(data.len());
    let mut traces: [TangentTrace; 3] = core::array::from_fn(|_| net.tangent_trace());
    let history = train_loop(
        "free energy",
        &mut net,
        cfg.epochs,
        cfg.learning_rate,
        |_, net, grad| {
            draw_noised(&clean, &model.schedule, rng, &mut noised);
            let mut loss = 0.0;
            for ((s, ns), &y0) in data.iter().zip(&noised).zip(&clean) {
                let mut residual = s.b;
                for (i, tt) in traces.iter_mut().enumerate() {
                    net.forward_tangent(
                        &model.input(s.z[i], ns.y, ns.omega),
                        &[1.0, 0.0, 0.0, 0.0],
                        tt,
                    )?;
                    residual += s.k_row[i] * tt.output_tangent()[0];
                }
                let residual = residual * inv_s;
                let fit = traces[1].output()[1] - y0;
                loss += (residual * residual + fit * fit) * inv_n;
                let r_cot = 2.0 * residual * inv_s * inv_n;
                for (i, tt) in traces.iter_mut().enumerate() {
                    let out_cot = [0.0, if i == 1 { 2.0 * fit * inv_n } else { 0.0 }];
                    net.backward_tangent(tt, &out_cot, &[r_cot * s.k_row[i], 0.0], grad, None)?;
                }
            }
            Ok(loss)
        },
    )?;
    model.net = net;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    /// Evolution samples of `M ρ̇ = −K Q` with a constant operator and
    /// `Q(ρ) = slope·(ρ − 0.5)` on a sinusoidal field.
    fn manufactured(slope: f64, profiles: usize) -> Vec<EvolutionSample> {
        let m = 20;
        let k1 = -2.0;
        let mut out = Vec::new();
        for p in 0..profiles {
            let amp = 0.05 + 0.3 * p as f64 / profiles as f64;
            let mean = 0.3 + 0.4 * ((p * 7) % profiles) as f64 / profiles as f64;
            let z: Vec<f64> = (0..m)
                .map(|i| mean + amp * (2.0 * core::f64::consts::PI * i as f64 / m as f64).cos())
                .map(|v: f64| v.clamp(0.02, 0.98))
                .collect();
            for j in 0..m {
                let l = (j + m - 1) % m;
                let r = (j + 1) % m;
                let zz = [z[l], z[j], z[r]];
                let k_row = [k1, -2.0 * k1, k1];
                let b = -(0..3)
                    .map(|i| k_row[i] * slope * (zz[i] - 0.5))
                    .sum::<f64>();
                out.push(EvolutionSample {
                    node: j,
                    b,
                    k_row,
                    z: zz,
                    upsilon: b,
                });
            }
        }
        out
    }

    fn small_cfg(epochs: usize) -> BaseConfig {
        BaseConfig {
            epochs,
            learning_rate: 3e-3,
            hidden_width: 16,
            hidden_layers: 2,
            ..BaseConfig::f_default()
        }
    }

    #[test]
    fn recovers_manufactured_force_slope() {
        let data = manufactured(3.0, 6);
        let mut rng = stream(21, Purpose::Training, 1, 0);
        let (model, history) = train_f_on_rows(&data, &small_cfg(2500), &mut rng).unwrap();
        assert!(history.last().unwrap() < &history[0]);
        let (_, q_lo) = model.predict(0.35).unwrap();
        let (_, q_hi) = model.predict(0.65).unwrap();
        let slope = (q_hi - q_lo) / 0.3;
        assert!((slope - 3.0).abs() < 0.15, "slope {slope}");
    }

    #[test]
    fn force_is_exact_derivative_of_prediction() {
        let data = manufactured(3.0, 3);
        let mut rng = stream(22, Purpose::Training, 1, 0);
        let (model, _) = train_f_on_rows(&data, &small_cfg(200), &mut rng).unwrap();
        for k in 1..20 {
            let rho = k as f64 / 20.0;
            let h = 1e-5;
            let fd =
                (model.predict(rho + h).unwrap().0 - model.predict(rho - h).unwrap().0) / (2.0 * h);
            let (_, q) = model.predict(rho).unwrap();
            assert!(
                (fd - q).abs() <= 1e-4 * q.abs().max(1e-2),
                "ρ={rho}: {fd} vs {q}"
            );
        }
        assert_eq!(model.predict(REFERENCE_DENSITY).unwrap().0, 0.0);
        assert_eq!(model.pass(0.3).unwrap(), model.pass(0.3).unwrap());
    }

    #[test]
    fn feature_tangent_matches_difference() {
        let data = manufactured(2.0, 2);
        let mut rng = stream(23, Purpose::Training, 1, 0);
        let (model, _) = train_f_on_rows(&data, &small_cfg(50), &mut rng).unwrap();
        let h = 1e-5;
        let p = model.pass(0.4).unwrap();
        let a = model.pass(0.4 + h).unwrap();
        let b = model.pass(0.4 - h).unwrap();
        assert_eq!(p.features.len(), model.feature_dim());
        for k in 0..p.features.len() {
            let fd = (a.features[k] - b.features[k]) / (2.0 * h);
            assert!((fd - p.feature_tangent[k]).abs() <= 1e-5 * fd.abs().max(1e-2));
        }
    }

    #[test]
    fn zero_rate_data_gives_flat_force() {
        let mut data = manufactured(0.0, 3);
        data.iter_mut().for_each(|s| s.upsilon = 0.0);
        let mut rng = stream(24, Purpose::Training, 1, 0);
        let (model, _) = train_f_on_rows(&data, &small_cfg(1500), &mut rng).unwrap();
        let q: Vec<f64> = (3..8)
            .map(|k| model.predict(k as f64 / 10.0).unwrap().1)
            .collect();
        let spread =
            q.iter().cloned().fold(f64::MIN, f64::max) - q.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.1, "{q:?}");
    }
}
