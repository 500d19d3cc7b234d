use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(
            params.len(),
            self.m.len(),
            "parameter length changed under Adam"
        );
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        self.beta1_pow *= self.beta1;
        self.beta2_pow *= self.beta2;
        let c1 = 1.0 / (1.0 - self.beta1_pow);
        let c2 = 1.0 / (1.0 - self.beta2_pow);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= self.learning_rate * (*m * c1) / (math::sqrt(*v * c2) + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut a = Adam::new(3, 0.1);
        let mut p = [1.0, -2.0, 0.5];
        for _ in 0..1000 {
            a.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(a.steps(), 1000);
    }

    #[test]
    fn minimizes_a_scalar_quadratic() {
        let mut a = Adam::new(1, 0.1);
        let mut w = [0.0];
        for _ in 0..500 {
            let g = [2.0 * (w[0] - 3.0)];
            a.step(&mut w, &g);
        }
        assert!((w[0] - 3.0).abs() < 1e-3, "{}", w[0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr·sign(g).
        let mut a = Adam::new(2, 0.01);
        let mut p = [0.0, 0.0];
        a.step(&mut p, &[5.0, -0.001]);
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-5);
        assert_eq!(a.steps(), 1);
    }
}
