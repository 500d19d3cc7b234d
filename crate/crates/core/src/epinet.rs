//! Epistemic neural networks on top of the frozen base models.
//!
//! An epinet maps the base model's features `h` and an index
//! `φ ~ N(0, I)` to a correction
//!
//! ```text
//! σ(h, φ) = κ·Σ_i p_i(h)·φ_i + NN(h, φ)·φ
//! ```
//!
//! where the prior nets `p_i` are random and frozen and `NN` is trained.
//! Each fixed `φ` selects one function; the spread over `φ` is the
//! epistemic uncertainty. For `K1` the correction is added to the raw
//! output before the sign transform, so every sample stays negative.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::fe::{EvolutionSample, OperatorSample};
use crate::models::{g, g_slope, FModel, K1Model};
use crate::nn::{Adam, Mlp, MlpSpec, TangentTrace, Trace};
use crate::rng::{normal, stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpinetConfig {
    /// `d_Φ`.
    pub index_dim: usize,
    /// `κ`.
    pub prior_scale: f64,
    pub prior_width: usize,
    pub prior_layers: usize,
    pub learnable_width: usize,
    pub learnable_layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fresh indices drawn per epoch, `|Φ|`.
    pub index_batch: usize,
}

impl Default for EpinetConfig {
    fn default() -> Self {
        Self {
            index_dim: 4,
            prior_scale: 1.0,
            prior_width: 16,
            prior_layers: 2,
            learnable_width: 16,
            learnable_layers: 2,
            epochs: 10_000,
            learning_rate: 1e-4,
            index_batch: 8,
        }
    }
}

impl EpinetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.index_dim == 0 || self.index_batch == 0 {
            return Err(config_err(
                "epistemic index size and batch must be positive",
            ));
        }
        if self.prior_width == 0
            || self.prior_layers == 0
            || self.learnable_width == 0
            || self.learnable_layers == 0
        {
            return Err(config_err("epinet hidden sizes must be positive"));
        }
        if !(self.prior_scale >= 0.0 && self.prior_scale.is_finite()) {
            return Err(config_err("prior scale must be non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("epinet learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epinet {
    /// `d_Φ` frozen scalar nets on the features.
    pub priors: Vec<Mlp>,
    /// `[h, φ] → ℝ^{d_Φ}`, contracted with `φ`.
    pub learnable: Mlp,
    pub prior_scale: f64,
}

impl Epinet {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        cfg: &EpinetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let prior_spec = MlpSpec::uniform(feature_dim, cfg.prior_width, cfg.prior_layers, 1)?;
        let priors = (0..cfg.index_dim)
            .map(|_| Mlp::xavier(prior_spec.clone(), rng))
            .collect();
        let spec = MlpSpec::uniform(
            feature_dim + cfg.index_dim,
            cfg.learnable_width,
            cfg.learnable_layers,
            cfg.index_dim,
        )?;
        // The learnable head starts at exactly zero, so away from the
        // distillation points the spread is set by `κ` alone and not by
        // the random initial output of the head.
        let mut learnable = Mlp::xavier(spec, rng);
        learnable.zero_output_layer();
        Ok(Self {
            priors,
            learnable,
            prior_scale: cfg.prior_scale,
        })
    }

    pub fn index_dim(&self) -> usize {
        self.priors.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.learnable.spec().input_dim() - self.index_dim()
    }

    fn check_index(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.index_dim() {
            return Err(Error::Shape {
                context: "epistemic index",
                expected: self.index_dim(),
                got: phi.len(),
            });
        }
        Ok(())
    }

    /// `(p_1(h), …, p_{d_Φ}(h))`.
    pub fn prior_basis(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut t = Trace::default();
        self.priors
            .iter()
            .map(|p| {
                p.forward(features, &mut t)?;
                Ok(t.output()[0])
            })
            .collect()
    }

    /// `κ·Σ p_i(h)·φ_i`.
    pub fn prior_output(&self, features: &[f64], phi: &[f64]) -> Result<f64> {
        self.check_index(phi)?;
        Ok(self.prior_scale * dot(&self.prior_basis(features)?, phi))
    }

    /// `NN(h, φ)·φ`.
    pub fn learnable_output(&self, features: &[f64], phi: &[f64]) -> Result<f64> {
        self.check_index(phi)?;
        let out = self.learnable.eval(&joined(features, phi))?;
        Ok(dot(&out, phi))
    }

    pub fn output(&self, features: &[f64], phi: &[f64]) -> Result<f64> {
        Ok(self.prior_output(features, phi)? + self.learnable_output(features, phi)?)
    }

    /// Output and its derivative along `feature_tangent`.
    pub fn output_with_tangent(
        &self,
        features: &[f64],
        feature_tangent: &[f64],
        phi: &[f64],
    ) -> Result<(f64, f64)> {
        self.check_index(phi)?;
        let mut tt = TangentTrace::default();
        let (mut v, mut dv) = (0.0, 0.0);
        for (p, &w) in self.priors.iter().zip(phi) {
            p.forward_tangent(features, feature_tangent, &mut tt)?;
            v += self.prior_scale * w * tt.output()[0];
            dv += self.prior_scale * w * tt.output_tangent()[0];
        }
        let zeros = vec![0.0; phi.len()];
        self.learnable.forward_tangent(
            &joined(features, phi),
            &joined(feature_tangent, &zeros),
            &mut tt,
        )?;
        v += dot(tt.output(), phi);
        dv += dot(tt.output_tangent(), phi);
        Ok((v, dv))
    }
}

/// The index-independent part of an epinet at fixed features: everything
/// an ensemble member needs besides its own index.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFeatures {
    /// `p_i(h)`.
    pub prior: Vec<f64>,
    /// First pre-activation of the learnable net from `h` and the bias.
    pub first_layer: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct EpinetScratch {
    pre: Vec<f64>,
    out: Vec<f64>,
    tmp: Vec<f64>,
}

impl Epinet {
    pub fn prepare(&self, features: &[f64]) -> Result<PreparedFeatures> {
        let prior = self.prior_basis(features)?;
        let mut first_layer = self.learnable.layer_params(0).1.to_vec();
        self.learnable
            .accumulate_first_layer(0, features, &mut first_layer)?;
        Ok(PreparedFeatures { prior, first_layer })
    }

    /// First-layer contribution of `φ`, shared by every prepared point.
    pub fn index_part(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.check_index(phi)?;
        let mut v = vec![0.0; self.learnable.layer_params(0).1.len()];
        self.learnable
            .accumulate_first_layer(self.feature_dim(), phi, &mut v)?;
        Ok(v)
    }

    /// Same value as [`Epinet::output`] at the prepared features.
    pub fn output_prepared(
        &self,
        point: &PreparedFeatures,
        index_part: &[f64],
        phi: &[f64],
        scratch: &mut EpinetScratch,
    ) -> f64 {
        scratch.pre.clear();
        scratch
            .pre
            .extend(point.first_layer.iter().zip(index_part).map(|(a, b)| a + b));
        self.learnable
            .finish_from_preactivation(&scratch.pre, &mut scratch.out, &mut scratch.tmp);
        self.prior_scale * dot(&point.prior, phi) + dot(&scratch.out, phi)
    }
}

/// Base prediction plus epinet correction.
pub fn enn_predict(base: f64, epinet: &Epinet, features: &[f64], phi: &[f64]) -> Result<f64> {
    Ok(base + epinet.output(features, phi)?)
}

/// `n` indices `φ ~ N(0, I_{d_Φ})`.
pub fn sample_functions<R: Rng + ?Sized>(index_dim: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..index_dim).map(|_| normal(rng)).collect())
        .collect()
}

fn joined(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Base evaluation at one distillation point.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillPoint {
    pub features: Vec<f64>,
    /// Raw `K1` output or free energy value of the base model.
    pub base: f64,
    /// Frozen prior basis at `features`.
    pub prior: Vec<f64>,
}

/// Distillation targets from the base models at the training conditions.
/// `K1` edges are deduplicated; each operator sample refers to its left
/// and right edge by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistillationSet {
    pub edges: Vec<DistillPoint>,
    /// `(left edge, right edge, K̂0, K̂1)`.
    pub k1_terms: Vec<(usize, usize, f64, f64)>,
    /// Free-energy points with target `f̂`.
    pub f_points: Vec<DistillPoint>,
}

impl DistillationSet {
    pub fn build(
        k1: &K1Model,
        f: &FModel,
        d_k1: &[OperatorSample],
        d_f: &[EvolutionSample],
        k1_epinet: &Epinet,
        f_epinet: &Epinet,
    ) -> Result<Self> {
        let mut set = Self::default();
        let mut index: BTreeMap<(u64, u64), usize> = BTreeMap::new();
        let mut edge = |za: f64, zb: f64, set: &mut Self| -> Result<usize> {
            let key = (za.to_bits(), zb.to_bits());
            if let Some(&i) = index.get(&key) {
                return Ok(i);
            }
            let pass = k1.pass(za, zb)?;
            let prior = k1_epinet.prior_basis(&pass.features)?;
            set.edges.push(DistillPoint {
                features: pass.features,
                base: pass.raw,
                prior,
            });
            index.insert(key, set.edges.len() - 1);
            Ok(set.edges.len() - 1)
        };
        for s in d_k1 {
            let l = edge(s.z_left, s.z_mid, &mut set)?;
            let r = edge(s.z_mid, s.z_right, &mut set)?;
            let (kl, kr) = (g(set.edges[l].base), g(set.edges[r].base));
            set.k1_terms.push((l, r, -kl - kr, kr));
        }
        for s in d_f {
            let pass = f.pass(s.z[1])?;
            let prior = f_epinet.prior_basis(&pass.features)?;
            set.f_points.push(DistillPoint {
                features: pass.features,
                base: pass.f,
                prior,
            });
        }
        Ok(set)
    }
}

/// Distillation loss for one batch of indices and its gradient with
/// respect to both learnable nets (accumulated into `grad_k1`, `grad_f`).
///
/// ```text
/// 1/M_K Σ_φ Σ_s |−K̃1(left) − K̃1(right) − K̂0|² + |K̃1(right) − K̂1|²
///   + 1/M_f Σ_φ Σ_s |f̃ − f̂|²
/// ```
pub fn distillation_loss(
    k1_epinet: &Epinet,
    f_epinet: &Epinet,
    set: &DistillationSet,
    phis_k1: &[Vec<f64>],
    phis_f: &[Vec<f64>],
    grad_k1: &mut [f64],
    grad_f: &mut [f64],
) -> Result<f64> {
    let mut loss = 0.0;
    let mut trace = Trace::default();
    let mut input = Vec::new();
    let mut cot = Vec::new();
    let mut sigma = vec![0.0; set.edges.len()];
    let mut sigma_cot = vec![0.0; set.edges.len()];

    let m_k = (phis_k1.len() * set.k1_terms.len()).max(1) as f64;
    for phi in phis_k1 {
        for (e, s) in set.edges.iter().zip(sigma.iter_mut()) {
            input.clear();
            input.extend_from_slice(&e.features);
            input.extend_from_slice(phi);
            let out = k1_epinet.learnable.eval(&input)?;
            *s = k1_epinet.prior_scale * dot(&e.prior, phi) + dot(&out, phi);
        }
        sigma_cot.fill(0.0);
        for &(l, r, k0, k1) in &set.k1_terms {
            let (al, ar) = (set.edges[l].base + sigma[l], set.edges[r].base + sigma[r]);
            let (kl, kr) = (g(al), g(ar));
            let closure = -kl - kr - k0;
            let fit = kr - k1;
            loss += (closure * closure + fit * fit) / m_k;
            sigma_cot[l] += -2.0 * closure * g_slope(al) / m_k;
            sigma_cot[r] += (-2.0 * closure + 2.0 * fit) * g_slope(ar) / m_k;
        }
        for (e, &sc) in set.edges.iter().zip(&sigma_cot) {
            if sc == 0.0 {
                continue;
            }
            input.clear();
            input.extend_from_slice(&e.features);
            input.extend_from_slice(phi);
            k1_epinet.learnable.forward(&input, &mut trace)?;
            cot.clear();
            cot.extend(phi.iter().map(|p| sc * p));
            k1_epinet
                .learnable
                .backward(&mut trace, &cot, grad_k1, None)?;
        }
    }

    let m_f = (phis_f.len() * set.f_points.len()).max(1) as f64;
    for phi in phis_f {
        for p in &set.f_points {
            input.clear();
            input.extend_from_slice(&p.features);
            input.extend_from_slice(phi);
            f_epinet.learnable.forward(&input, &mut trace)?;
            let s = f_epinet.prior_scale * dot(&p.prior, phi) + dot(trace.output(), phi);
            // Target is the base prediction itself.
            let err = s;
            loss += err * err / m_f;
            cot.clear();
            cot.extend(phi.iter().map(|v| 2.0 * err / m_f * v));
            f_epinet
                .learnable
                .backward(&mut trace, &cot, grad_f, None)?;
        }
    }
    Ok(loss)
}

/// Trained epinets for both base models.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEpinets {
    pub k1: Epinet,
    pub f: Epinet,
    pub history: Vec<f64>,
}

/// Builds both epinets from `seed` and trains their learnable parts
/// jointly by distillation, with a fresh batch of indices per epoch from
/// two independent streams. Base models are only read.
pub fn train_epinets(
    k1: &K1Model,
    f: &FModel,
    d_k1: &[OperatorSample],
    d_f: &[EvolutionSample],
    cfg: &EpinetConfig,
    seed: u64,
) -> Result<TrainedEpinets> {
    cfg.validate()?;
    if d_k1.is_empty() {
        return Err(Error::EmptyDataset("operator samples"));
    }
    if d_f.is_empty() {
        return Err(Error::EmptyDataset("evolution samples"));
    }
    let mut init = stream(seed, Purpose::Init, 2, 0);
    let mut k1_net = Epinet::new(k1.feature_dim(), cfg, &mut init)?;
    let mut f_net = Epinet::new(f.feature_dim(), cfg, &mut init)?;
    let set = DistillationSet::build(k1, f, d_k1, d_f, &k1_net, &f_net)?;

    let mut rng_k1 = stream(seed, Purpose::Epistemic, 0, 0);
    let mut rng_f = stream(seed, Purpose::Epistemic, 1, 0);
    let mut adam_k1 = Adam::new(k1_net.learnable.param_count(), cfg.learning_rate);
    let mut adam_f = Adam::new(f_net.learnable.param_count(), cfg.learning_rate);
    let mut grad_k1 = vec![0.0; k1_net.learnable.param_count()];
    let mut grad_f = vec![0.0; f_net.learnable.param_count()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let phis_k1 = sample_functions(cfg.index_dim, cfg.index_batch, &mut rng_k1);
        let phis_f = sample_functions(cfg.index_dim, cfg.index_batch, &mut rng_f);
        grad_k1.fill(0.0);
        grad_f.fill(0.0);
        let loss = distillation_loss(
            &k1_net,
            &f_net,
            &set,
            &phis_k1,
            &phis_f,
            &mut grad_k1,
            &mut grad_f,
        )?;
        if !loss.is_finite() || grad_k1.iter().chain(&grad_f).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                model: "epinets",
                epoch,
                loss,
            });
        }
        history.push(loss);
        adam_k1.step(k1_net.learnable.params_mut(), &grad_k1);
        adam_f.step(f_net.learnable.params_mut(), &grad_f);
    }
    log::debug!(
        "epinets: {} epochs, final loss {:?}",
        cfg.epochs,
        history.last()
    );
    Ok(TrainedEpinets {
        k1: k1_net,
        f: f_net,
        history,
    })
}

/// Base models with their epinets: one function sample per index pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicModel {
    pub k1: K1Model,
    pub f: FModel,
    pub k1_epinet: Epinet,
    pub f_epinet: Epinet,
}

impl EpistemicModel {
    /// `K̃1 = g(raw + σ)` on the edge `(z_a, z_b)`.
    pub fn k1(&self, za: f64, zb: f64, phi: &[f64]) -> Result<f64> {
        let pass = self.k1.pass(za, zb)?;
        Ok(g(enn_predict(
            pass.raw,
            &self.k1_epinet,
            &pass.features,
            phi,
        )?))
    }

    /// `(f̃, Q̃)` at `ρ`.
    pub fn free_energy(&self, rho: f64, phi: &[f64]) -> Result<(f64, f64)> {
        let pass = self.f.pass(rho)?;
        let (s, ds) =
            self.f_epinet
                .output_with_tangent(&pass.features, &pass.feature_tangent, phi)?;
        Ok((pass.f + s, pass.q + ds))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{train_f_on_rows, train_k1, BaseConfig};

    fn small_cfg() -> EpinetConfig {
        EpinetConfig {
            epochs: 300,
            learning_rate: 3e-3,
            ..EpinetConfig::default()
        }
    }

    fn features(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn zero_index_and_zero_scale_vanish() {
        let mut rng = stream(1, Purpose::Init, 0, 0);
        let net = Epinet::new(6, &EpinetConfig::default(), &mut rng).unwrap();
        let h = features(&mut rng, 6);
        assert_eq!(net.prior_output(&h, &[0.0; 4]).unwrap(), 0.0);
        assert_eq!(net.learnable_output(&h, &[0.0; 4]).unwrap(), 0.0);
        let cold = Epinet {
            prior_scale: 0.0,
            ..net.clone()
        };
        assert_eq!(cold.prior_output(&h, &[1.0, -2.0, 0.5, 3.0]).unwrap(), 0.0);
        let mut zeroed = cold;
        zeroed.learnable.zero_output_layer();
        for _ in 0..10 {
            let phi = sample_functions(4, 1, &mut rng).pop().unwrap();
            assert_eq!(zeroed.learnable_output(&h, &phi).unwrap(), 0.0);
            assert_eq!(enn_predict(1.25, &zeroed, &h, &phi).unwrap(), 1.25);
        }
        assert!(net.output(&h, &[1.0; 3]).is_err());
    }

    #[test]
    fn prior_has_zero_mean_over_indices() {
        let mut rng = stream(2, Purpose::Init, 0, 0);
        let net = Epinet::new(5, &EpinetConfig::default(), &mut rng).unwrap();
        let h = features(&mut rng, 5);
        let basis = net.prior_basis(&h).unwrap();
        let n = 100_000;
        let phis = sample_functions(4, n, &mut stream(3, Purpose::Epistemic, 0, 0));
        let vals: Vec<f64> = phis
            .iter()
            .map(|p| net.prior_output(&h, p).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = basis.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {sd}");
    }

    #[test]
    fn linear_in_index_with_zeroed_learnable_head() {
        let mut rng = stream(4, Purpose::Init, 0, 0);
        let mut net = Epinet::new(5, &EpinetConfig::default(), &mut rng).unwrap();
        net.learnable.zero_output_layer();
        let h = features(&mut rng, 5);
        let a = [0.3, -1.0, 2.0, 0.1];
        let b = [1.5, 0.2, -0.7, 0.4];
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let lhs = net.output(&h, &ab).unwrap();
        let rhs = 2.0 * net.output(&h, &a).unwrap() - 3.0 * net.output(&h, &b).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn spread_grows_with_prior_scale() {
        let mut rng = stream(5, Purpose::Init, 0, 0);
        let mut net = Epinet::new(5, &EpinetConfig::default(), &mut rng).unwrap();
        net.learnable.zero_output_layer();
        let h = features(&mut rng, 5);
        let phis = sample_functions(4, 5000, &mut stream(6, Purpose::Epistemic, 0, 0));
        let var = |kappa: f64| {
            let n = Epinet {
                prior_scale: kappa,
                ..net.clone()
            };
            let v: Vec<f64> = phis
                .iter()
                .map(|p| g(enn_predict(2.0, &n, &h, p).unwrap()))
                .collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            assert!(v.iter().all(|&k| k < 0.0));
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let (v0, v1, v2) = (var(0.0), var(0.5), var(1.0));
        assert!(v0 < 1e-24);
        assert!(v0 < v1 && v1 < v2);
    }

    #[test]
    fn index_draws_are_reproducible_and_white() {
        let a = sample_functions(4, 10, &mut stream(7, Purpose::Epistemic, 0, 0));
        let b = sample_functions(4, 10, &mut stream(7, Purpose::Epistemic, 0, 0));
        assert_eq!(a, b);
        let n = 100_000;
        let phis = sample_functions(4, n, &mut stream(8, Purpose::Epistemic, 0, 0));
        for i in 0..4 {
            for j in 0..4 {
                let c = phis.iter().map(|p| p[i] * p[j]).sum::<f64>() / n as f64;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((c - expect).abs() < 0.02, "cov[{i}][{j}] = {c}");
            }
        }
    }

    #[test]
    fn tangent_matches_difference() {
        let mut rng = stream(9, Purpose::Init, 0, 0);
        let net = Epinet::new(5, &EpinetConfig::default(), &mut rng).unwrap();
        let h = features(&mut rng, 5);
        let dh = features(&mut rng, 5);
        let phi = [0.4, -1.1, 0.7, 0.2];
        let (v, dv) = net.output_with_tangent(&h, &dh, &phi).unwrap();
        assert!((v - net.output(&h, &phi).unwrap()).abs() < 1e-14);
        let eps = 1e-6;
        let shift = |s: f64| -> Vec<f64> { h.iter().zip(&dh).map(|(a, b)| a + s * b).collect() };
        let fd = (net.output(&shift(eps), &phi).unwrap() - net.output(&shift(-eps), &phi).unwrap())
            / (2.0 * eps);
        assert!((fd - dv).abs() < 1e-7 * dv.abs().max(1.0));
    }

    #[test]
    fn prepared_evaluation_matches_direct() {
        let mut rng = stream(13, Purpose::Init, 0, 0);
        let net = Epinet::new(6, &EpinetConfig::default(), &mut rng).unwrap();
        let h = features(&mut rng, 6);
        let point = net.prepare(&h).unwrap();
        let mut scratch = EpinetScratch::default();
        for phi in sample_functions(4, 5, &mut rng) {
            let part = net.index_part(&phi).unwrap();
            let fast = net.output_prepared(&point, &part, &phi, &mut scratch);
            assert!((fast - net.output(&h, &phi).unwrap()).abs() < 1e-13);
        }
        assert!(net.prepare(&h[..5]).is_err());
    }

    fn tiny_models() -> (K1Model, FModel, Vec<OperatorSample>, Vec<EvolutionSample>) {
        let d_k1: Vec<OperatorSample> = (0..12)
            .map(|i| {
                let z = 0.3 + 0.03 * i as f64;
                OperatorSample {
                    z_left: z - 0.02,
                    z_mid: z,
                    z_right: z + 0.02,
                    k0: 2.0,
                    k1: -1.0,
                }
            })
            .collect();
        let d_f: Vec<EvolutionSample> = (0..12)
            .map(|i| {
                let z = 0.3 + 0.03 * i as f64;
                EvolutionSample {
                    node: i,
                    b: 0.1,
                    k_row: [-1.0, 2.0, -1.0],
                    z: [z - 0.02, z, z + 0.02],
                    upsilon: 0.1,
                }
            })
            .collect();
        let cfg = BaseConfig {
            epochs: 5,
            hidden_width: 8,
            hidden_layers: 2,
            ..BaseConfig::k1_default()
        };
        let mut rng = stream(10, Purpose::Training, 0, 0);
        let (k1, _) = train_k1(&d_k1, &cfg, &mut rng).unwrap();
        let (f, _) = train_f_on_rows(&d_f, &cfg, &mut rng).unwrap();
        (k1, f, d_k1, d_f)
    }

    #[test]
    fn distillation_gradient_matches_difference() {
        let (k1, f, d_k1, d_f) = tiny_models();
        let cfg = EpinetConfig::default();
        let mut rng = stream(11, Purpose::Init, 0, 0);
        let ek = Epinet::new(k1.feature_dim(), &cfg, &mut rng).unwrap();
        let ef = Epinet::new(f.feature_dim(), &cfg, &mut rng).unwrap();
        let set = DistillationSet::build(&k1, &f, &d_k1, &d_f, &ek, &ef).unwrap();
        let phk = sample_functions(4, 3, &mut rng);
        let phf = sample_functions(4, 3, &mut rng);
        let mut gk = vec![0.0; ek.learnable.param_count()];
        let mut gf = vec![0.0; ef.learnable.param_count()];
        distillation_loss(&ek, &ef, &set, &phk, &phf, &mut gk, &mut gf).unwrap();
        let loss_at = |ek: &Epinet, ef: &Epinet| {
            let mut a = vec![0.0; ek.learnable.param_count()];
            let mut b = vec![0.0; ef.learnable.param_count()];
            distillation_loss(ek, ef, &set, &phk, &phf, &mut a, &mut b).unwrap()
        };
        let h = 1e-5;
        for (which, grad) in [(0, &gk), (1, &gf)] {
            for p in (0..grad.len()).step_by(7) {
                let (mut a, mut b) = (ek.clone(), ef.clone());
                let (mut c, mut d) = (ek.clone(), ef.clone());
                if which == 0 {
                    a.learnable.params_mut()[p] += h;
                    c.learnable.params_mut()[p] -= h;
                } else {
                    b.learnable.params_mut()[p] += h;
                    d.learnable.params_mut()[p] -= h;
                }
                let fd = (loss_at(&a, &b) - loss_at(&c, &d)) / (2.0 * h);
                let rel = (fd - grad[p]).abs() / fd.abs().max(grad[p].abs()).max(1e-4);
                assert!(rel < 1e-5, "net {which} param {p}: {fd} vs {}", grad[p]);
            }
        }
    }

    #[test]
    fn training_leaves_priors_and_base_untouched() {
        let (k1, f, d_k1, d_f) = tiny_models();
        let (k1_before, f_before) = (k1.clone(), f.clone());
        let cfg = small_cfg();
        let trained = train_epinets(&k1, &f, &d_k1, &d_f, &cfg, 5).unwrap();
        assert_eq!(k1, k1_before);
        assert_eq!(f, f_before);
        let mut init = stream(5, Purpose::Init, 2, 0);
        let fresh = Epinet::new(k1.feature_dim(), &cfg, &mut init).unwrap();
        assert_eq!(trained.k1.priors, fresh.priors);
        assert_ne!(trained.k1.learnable, fresh.learnable);
        let h = &trained.history;
        assert!(h.last().unwrap() < &h[0]);
    }

    #[test]
    fn distillation_reproduces_targets_on_average() {
        let (k1, f, d_k1, d_f) = tiny_models();
        let cfg = EpinetConfig {
            epochs: 4000,
            ..small_cfg()
        };
        let trained = train_epinets(&k1, &f, &d_k1, &d_f, &cfg, 6).unwrap();
        let enn = EpistemicModel {
            k1: k1.clone(),
            f: f.clone(),
            k1_epinet: trained.k1,
            f_epinet: trained.f,
        };
        let phis = sample_functions(4, 400, &mut stream(12, Purpose::Epistemic, 9, 0));
        for s in d_k1.iter().step_by(3) {
            let target = k1.predict(s.z_mid, s.z_right).unwrap();
            let mean = phis
                .iter()
                .map(|p| enn.k1(s.z_mid, s.z_right, p).unwrap())
                .sum::<f64>()
                / phis.len() as f64;
            assert!(
                (mean - target).abs() < 0.01 * target.abs(),
                "{mean} vs {target}"
            );
        }
        let k1_scale = d_k1
            .iter()
            .map(|s| k1.predict(s.z_mid, s.z_right).unwrap().abs())
            .sum::<f64>();
        assert!(k1_scale > 0.0);
    }
}
