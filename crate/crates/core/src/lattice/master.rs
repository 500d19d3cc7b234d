use alloc::vec;
use alloc::vec::Vec;

use super::{jump_rate, LatticeConfig, LatticeState};
use crate::error::{precondition, Error, Result};
use crate::linalg::Dense;

/// Largest particle-number sector the oracle will enumerate.
pub const MAX_SECTOR_STATES: usize = 70;

/// Exact Markov generator of a small lattice restricted to one
/// particle-number sector, on the same diffusive clock as [`super::Kmc`].
#[derive(Debug, Clone)]
pub struct MasterEquation {
    states: Vec<Vec<u8>>,
    index_of: Vec<usize>,
    generator: Dense,
}

impl MasterEquation {
    pub fn new(cfg: &LatticeConfig, particles: usize) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.num_sites;
        if n > 8 || particles > n {
            return Err(precondition("oracle needs N <= 8 and k <= N"));
        }
        let states: Vec<Vec<u8>> = (0usize..1 << n)
            .filter(|m| m.count_ones() as usize == particles)
            .map(|m| (0..n).map(|i| ((m >> i) & 1) as u8).collect())
            .collect();
        if states.len() > MAX_SECTOR_STATES {
            return Err(Error::SectorTooLarge {
                states: states.len(),
                limit: MAX_SECTOR_STATES,
            });
        }
        let mut index_of = vec![usize::MAX; 1 << n];
        for (k, s) in states.iter().enumerate() {
            index_of[mask(s)] = k;
        }
        let scale = cfg.rate_scale();
        let mut generator = Dense::zeros(states.len());
        for (a, s) in states.iter().enumerate() {
            let state = LatticeState::new(s.clone());
            let mut out = 0.0;
            for x in 0..n {
                for y in [(x + 1) % n, (x + n - 1) % n] {
                    let r = jump_rate(&state, x, y, cfg)? * scale;
                    if r > 0.0 {
                        let mut t = s.clone();
                        t.swap(x, y);
                        generator[(a, index_of[mask(&t)])] += r;
                        out += r;
                    }
                }
            }
            generator[(a, a)] -= out;
        }
        Ok(Self {
            states,
            index_of,
            generator,
        })
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    /// Position of `occupation` in [`Self::states`], if it is in the sector.
    pub fn index(&self, occupation: &[u8]) -> Option<usize> {
        self.index_of
            .get(mask(occupation))
            .copied()
            .filter(|&k| k != usize::MAX)
    }

    /// `G[a][b]` is the rate of `a → b`; rows sum to zero.
    pub fn generator(&self) -> &Dense {
        &self.generator
    }

    /// Null vector of `Gᵀ`, normalized to a probability distribution.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let m = self.states.len();
        let mut a = self.generator.transpose();
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        let mut rhs = vec![0.0; m];
        rhs[m - 1] = 1.0;
        a.solve(&rhs)
    }

    /// `p0ᵀ·exp(G·t)`.
    pub fn propagate(&self, p0: &[f64], t: f64) -> Vec<f64> {
        let mut g = self.generator.clone();
        g.scale(t);
        g.expm().left_mul(p0)
    }

    /// Site occupation probabilities under a sector distribution.
    pub fn marginals(&self, p: &[f64]) -> Vec<f64> {
        let n = self.states.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (s, &w) in self.states.iter().zip(p) {
            for (o, &e) in out.iter_mut().zip(s) {
                *o += w * f64::from(e);
            }
        }
        out
    }
}

fn mask(occupation: &[u8]) -> usize {
    occupation
        .iter()
        .enumerate()
        .fold(0, |m, (i, &o)| m | ((o as usize) << i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Interaction;

    #[test]
    fn free_exclusion_is_uniform_and_rows_sum_to_zero() {
        let cfg = LatticeConfig::non_interacting(6);
        let me = MasterEquation::new(&cfg, 3).unwrap();
        assert_eq!(me.states().len(), 20);
        let g = me.generator();
        for a in 0..20 {
            let s: f64 = (0..20).map(|b| g[(a, b)]).sum();
            assert!(s.abs() < 1e-12);
        }
        for p in me.stationary().unwrap() {
            assert!((p - 1.0 / 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn propagator_relaxes_to_stationary() {
        let cfg = LatticeConfig {
            interaction: Interaction::symmetric(vec![0.7]),
            binding_energy: 0.2,
            ..LatticeConfig::non_interacting(6)
        };
        let me = MasterEquation::new(&cfg, 2).unwrap();
        let pi = me.stationary().unwrap();
        let mut p0 = vec![0.0; pi.len()];
        p0[0] = 1.0;
        let pt = me.propagate(&p0, 5.0);
        for (a, b) in pt.iter().zip(&pi) {
            assert!((a - b).abs() < 1e-8);
        }
        // Detailed balance with respect to exp(+½ Σ βĴ η η).
        let weight = |s: &[u8]| {
            let e: f64 = (0..6).map(|x| f64::from(s[x] * s[(x + 1) % 6]) * 0.7).sum();
            libm::exp(e)
        };
        let z: f64 = me.states().iter().map(|s| weight(s)).sum();
        for (s, p) in me.states().iter().zip(&pi) {
            assert!((weight(s) / z - p).abs() < 1e-10);
        }
    }

    #[test]
    fn oversized_sector_is_refused() {
        let cfg = LatticeConfig::non_interacting(8);
        assert!(MasterEquation::new(&cfg, 4).is_ok()); // C(8,4) = 70
        let cfg9 = LatticeConfig::non_interacting(9);
        assert!(MasterEquation::new(&cfg9, 4).is_err());
    }

    #[test]
    fn marginals_of_uniform_sector_are_filling_fraction() {
        let me = MasterEquation::new(&LatticeConfig::non_interacting(4), 2).unwrap();
        let p = me.stationary().unwrap();
        for m in me.marginals(&p) {
            assert!((m - 0.5).abs() < 1e-12);
        }
        assert_eq!(
            me.index(&[1, 1, 0, 0]).map(|k| me.states()[k].clone()),
            Some(vec![1, 1, 0, 0])
        );
        assert_eq!(me.index(&[1, 1, 1, 0]), None);
    }
}
