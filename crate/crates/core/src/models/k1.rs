use alloc::vec::Vec;

use rand::Rng;

use super::transform::{g, g_inverse, g_slope};
use super::{clamp_unit, BaseConfig, CHAIN_START};
use crate::diffusion::{
    cosine_schedule, ddim_step, draw_noised, fourier_embed, sample, strided_steps, train_loop,
    Denoiser, DiffusionSchedule, Standardizer,
};
use crate::error::{Error, Result};
use crate::fe::OperatorSample;
use crate::nn::{Mlp, MlpSpec, Trace};

/// Conditional denoiser for `K1` on an edge `(z_a, z_b)`.
///
/// The network sees `[z_a, z_b, y, sin, cos]` and emits a standardized raw
/// value; `K̂1 = g(raw)` is then standardized again to give the denoised
/// target.
#[derive(Debug, Clone, PartialEq)]
pub struct K1Model {
    pub net: Mlp,
    pub schedule: DiffusionSchedule,
    /// Standardization of the `K1` targets (diffusion space).
    pub target: Standardizer,
    /// Scale of the raw head: `raw = raw.inverse(net output)`.
    pub raw: Standardizer,
    pub sample_steps: usize,
}

/// Result of the deterministic reverse chain at its final step.
#[derive(Debug, Clone, PartialEq)]
pub struct K1Pass {
    /// Pre-transform prediction; `K1 = g(raw)`.
    pub raw: f64,
    /// Last hidden layer followed by the edge `[z_a, z_b]`.
    pub features: Vec<f64>,
}

impl K1Model {
    fn input(&self, za: f64, zb: f64, y: f64, omega: usize) -> [f64; 5] {
        let [s, c] = fourier_embed(omega, self.schedule.steps());
        [za, zb, y, s, c]
    }

    fn raw_of(&self, trace: &Trace) -> f64 {
        self.raw.inverse(trace.output()[0])
    }

    pub fn feature_dim(&self) -> usize {
        self.net.spec().last_hidden_dim() + 2
    }

    /// Deterministic `η = 0` chain over `n_steps` strided steps.
    pub fn pass_with_steps(&self, za: f64, zb: f64, n_steps: usize) -> Result<K1Pass> {
        let za = clamp_unit(za, "K1 condition");
        let zb = clamp_unit(zb, "K1 condition");
        let steps = strided_steps(self.schedule.steps(), n_steps)?;
        let mut trace = self.net.trace();
        let mut y = CHAIN_START;
        for (k, &omega) in steps.iter().enumerate() {
            self.net
                .forward(&self.input(za, zb, y, omega), &mut trace)?;
            let raw = self.raw_of(&trace);
            match steps.get(k + 1) {
                Some(&prev) => {
                    let y_hat = self.target.forward(g(raw));
                    y = ddim_step(y, y_hat, omega, prev, &self.schedule, 0.0, 0.0);
                }
                None => {
                    let mut features = trace.last_hidden().to_vec();
                    features.extend_from_slice(&[za, zb]);
                    return Ok(K1Pass { raw, features });
                }
            }
        }
        unreachable!("strided_steps returns at least one step")
    }

    pub fn pass(&self, za: f64, zb: f64) -> Result<K1Pass> {
        self.pass_with_steps(za, zb, self.sample_steps)
    }

    /// Deterministic `K1` on the edge `(z_a, z_b)`; always `≤ −e^{−5}`.
    pub fn predict(&self, za: f64, zb: f64) -> Result<f64> {
        Ok(g(self.pass(za, zb)?.raw))
    }

    pub fn predict_with_steps(&self, za: f64, zb: f64, n_steps: usize) -> Result<f64> {
        Ok(g(self.pass_with_steps(za, zb, n_steps)?.raw))
    }

    /// One stochastic draw in physical units.
    pub fn sample<R: Rng>(
        &self,
        za: f64,
        zb: f64,
        n_steps: usize,
        eta: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let y = sample(self, &[za, zb], &self.schedule, n_steps, eta, rng)?;
        Ok(self.target.inverse(y))
    }
}

impl Denoiser for K1Model {
    fn denoise(&self, condition: &[f64], y: f64, omega: usize) -> Result<f64> {
        let out = self
            .net
            .eval(&self.input(condition[0], condition[1], y, omega))?;
        Ok(self.target.forward(g(self.raw.inverse(out[0]))))
    }
}

/// Trains the `K1` denoiser on
///
/// ```text
/// |−K̂1(Z_left, y_ω, ω) − K̂1(Z_right, y_ω, ω) − K0|² + |K̂1(Z_right, y_ω, ω) − K1|²
/// ```
///
/// averaged over samples, with one fresh `(ω, y_ω)` per sample and epoch
/// shared by both edges. Returns the model and the loss history.
pub fn train_k1<R: Rng>(
    data: &[OperatorSample],
    cfg: &BaseConfig,
    rng: &mut R,
) -> Result<(K1Model, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("operator samples"));
    }
    let k1: Vec<f64> = data.iter().map(|s| s.k1).collect();
    let target = Standardizer::fit(&k1);
    let raw_targets: Vec<f64> = k1.iter().map(|&k| g_inverse(k)).collect();
    let raw = Standardizer::fit(&raw_targets);
    let clean: Vec<f64> = k1.iter().map(|&k| target.forward(k)).collect();

    let spec = MlpSpec::uniform(5, cfg.hidden_width, cfg.hidden_layers, 1)?;
    let mut model = K1Model {
        net: Mlp::xavier(spec, rng),
        schedule: cosine_schedule(cfg.diffusion_steps)?,
        target,
        raw,
        sample_steps: cfg.sample_steps,
    };
    let mut net = core::mem::replace(
        &mut model.net,
        Mlp::zeros(MlpSpec::new(alloc::vec![1, 1, 1])?),
    );
    let inv_n = 1.0 / data.len() as f64;
    let mut noised = Vec::with_capacity(data.len());
    let mut left = net.trace();
    let mut right = net.trace();
    let history = train_loop(
        "K1",
        &mut net,
        cfg.epochs,
        cfg.learning_rate,
        |_, net, grad| {
            draw_noised(&clean, &model.schedule, rng, &mut noised);
            let mut loss = 0.0;
            for (s, ns) in data.iter().zip(&noised) {
                net.forward(&model.input(s.z_left, s.z_mid, ns.y, ns.omega), &mut left)?;
                net.forward(&model.input(s.z_mid, s.z_right, ns.y, ns.omega), &mut right)?;
                let (rl, rr) = (model.raw_of(&left), model.raw_of(&right));
                let (kl, kr) = (g(rl), g(rr));
                let closure = -kl - kr - s.k0;
                let fit = kr - s.k1;
                loss += (closure * closure + fit * fit) * inv_n;
                let dkl = -2.0 * closure * inv_n;
                let dkr = (-2.0 * closure + 2.0 * fit) * inv_n;
                net.backward(
                    &mut left,
                    &[dkl * g_slope(rl) * model.raw.scale],
                    grad,
                    None,
                )?;
                net.backward(
                    &mut right,
                    &[dkr * g_slope(rr) * model.raw.scale],
                    grad,
                    None,
                )?;
            }
            Ok(loss)
        },
    )?;
    model.net = net;
    Ok((model, history))
}
