use alloc::vec::Vec;

use rand::Rng;

use super::{forward_noise, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Adam, Mlp};
use crate::rng::normal;

/// Affine map to zero mean and unit variance over a training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    /// Population mean and standard deviation; a degenerate spread falls
    /// back to unit scale.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::identity();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = math::sqrt(var);
        Self {
            mean,
            scale: if sd > 1e-12 * mean.abs().max(1.0) {
                sd
            } else {
                1.0
            },
        }
    }

    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            scale: 1.0,
        }
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        y * self.scale + self.mean
    }
}

/// One training draw: the step and the noised standardized target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisedSample {
    pub omega: usize,
    pub y: f64,
}

/// Fresh `ω ~ U{1..Ω}` and forward noising for every target.
pub fn draw_noised<R: Rng + ?Sized>(
    targets: &[f64],
    sched: &DiffusionSchedule,
    rng: &mut R,
    out: &mut Vec<NoisedSample>,
) {
    out.clear();
    out.extend(targets.iter().map(|&y0| {
        let omega = rng.random_range(1..=sched.steps());
        NoisedSample {
            omega,
            y: forward_noise(y0, omega, sched, normal(rng)),
        }
    }));
}

/// Full-batch Adam. `epoch` receives the current network and a zeroed
/// gradient buffer, fills the gradient and returns the loss. Returns the
/// loss history; a non-finite loss aborts.
pub fn train_loop(
    name: &'static str,
    net: &mut Mlp,
    epochs: usize,
    learning_rate: f64,
    mut epoch: impl FnMut(usize, &Mlp, &mut [f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut adam = Adam::new(net.param_count(), learning_rate);
    let mut grad = alloc::vec![0.0; net.param_count()];
    let mut history = Vec::with_capacity(epochs);
    for e in 0..epochs {
        grad.fill(0.0);
        let loss = epoch(e, net, &mut grad)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                model: name,
                epoch: e,
                loss,
            });
        }
        history.push(loss);
        adam.step(net.params_mut(), &grad);
    }
    log::debug!("{name}: {} epochs, final loss {:?}", epochs, history.last());
    Ok(history)
}
