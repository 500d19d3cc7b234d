use alloc::vec::Vec;

use rand::Rng;

use super::{
    sample_initial, InitialProfile, LatticeConfig, LatticeState, SamplingSchedule, SumTree,
};
use crate::math;
use crate::rng::open_unit;

/// One executed hop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub from: usize,
    pub to: usize,
    pub waiting_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub occupation: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KmcTrajectory {
    pub records: Vec<Snapshot>,
}

/// Rejection-free (BKL) simulator for one realization.
///
/// Keeps the interaction field of every site and a sum tree over per-site
/// escape rates. A hop changes the field only within `L + 1` sites of the
/// source, and only sites whose field or neighbourhood changed are
/// refreshed.
#[derive(Debug, Clone)]
pub struct Kmc<'a> {
    cfg: &'a LatticeConfig,
    state: LatticeState,
    field: Vec<f64>,
    rates: SumTree,
    /// `d·exp(−βÛ0)·N²`.
    prefactor: f64,
    /// Nonzero field changes `(z − x, δ)` caused by a hop `x → x+1`.
    hop_stencil: Vec<(usize, f64)>,
}

impl<'a> Kmc<'a> {
    pub fn new(cfg: &'a LatticeConfig, state: LatticeState) -> Self {
        let n = cfg.num_sites;
        assert_eq!(
            state.occupation.len(),
            n,
            "state length must equal num_sites"
        );
        let field: Vec<f64> = (0..n).map(|x| cfg.field_at(&state.occupation, x)).collect();
        let prefactor = cfg.diffusion_coefficient() * cfg.rate_scale();
        let range = cfg.interaction.range();
        // Offsets are stored shifted by `range` so they stay unsigned.
        let hop_stencil = (0..2 * range + 2)
            .filter_map(|k| {
                let off = k as i64 - range as i64;
                let delta = cfg.interaction.at(off - 1) - cfg.interaction.at(off);
                (delta != 0.0).then_some((k, delta))
            })
            .collect();
        let mut kmc = Self {
            cfg,
            state,
            field,
            rates: SumTree::new(n),
            prefactor,
            hop_stencil,
        };
        for x in 0..n {
            let r = kmc.escape_rate(x);
            kmc.rates.set_leaf(x, r);
        }
        kmc.rates.refresh(0, n - 1);
        kmc
    }

    pub fn state(&self) -> &LatticeState {
        &self.state
    }

    pub fn into_state(self) -> LatticeState {
        self.state
    }

    /// Sum of all admissible hop rates, in diffusive time.
    pub fn total_rate(&self) -> f64 {
        self.rates.total()
    }

    /// Escape rate of site `x` (sum over its admissible hops).
    fn escape_rate(&self, x: usize) -> f64 {
        let n = self.cfg.num_sites;
        let eta = &self.state.occupation;
        if eta[x] == 0 {
            return 0.0;
        }
        let free = (1 - eta[(x + n - 1) % n]) + (1 - eta[(x + 1) % n]);
        if free == 0 {
            return 0.0;
        }
        f64::from(free) * self.prefactor * math::exp(-self.field[x])
    }

    /// Exponential waiting time `−ln(u)/R_tot` at the current state.
    /// Infinite when the state is frozen.
    pub fn sample_waiting_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        -math::ln(open_unit(rng)) / self.total_rate()
    }

    /// Picks a hop with probability proportional to its rate and applies it.
    /// The clock is not advanced.
    fn fire<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (usize, usize) {
        let n = self.cfg.num_sites;
        let x = self.rates.select(rng.random::<f64>() * self.rates.total());
        let eta = &self.state.occupation;
        let left = (x + n - 1) % n;
        let right = (x + 1) % n;
        let y = match (eta[left] == 0, eta[right] == 0) {
            (true, true) => {
                if rng.random::<bool>() {
                    right
                } else {
                    left
                }
            }
            (true, false) => left,
            _ => right,
        };
        self.apply(x, y);
        (x, y)
    }

    fn apply(&mut self, x: usize, y: usize) {
        let n = self.cfg.num_sites;
        self.state.occupation[x] = 0;
        self.state.occupation[y] = 1;
        let range = self.cfg.interaction.range();
        // The field at z changes by βĴ(z−y) − βĴ(z−x). A left hop is the
        // mirror of a right hop from y, with the sign flipped.
        let (base, sign) = if (x + 1) % n == y {
            (x, 1.0)
        } else {
            (y, -1.0)
        };
        for i in 0..self.hop_stencil.len() {
            let (k, delta) = self.hop_stencil[i];
            let z = (base + n - range + k) % n;
            self.field[z] += sign * delta;
            self.refresh_site(z);
        }
        for k in 0..4 {
            self.refresh_site((base + n - 1 + k) % n);
        }
    }

    #[inline]
    fn refresh_site(&mut self, s: usize) {
        let r = self.escape_rate(s);
        self.rates.set(s, r);
    }

    /// One BKL event. `None` when no hop is admissible.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Step> {
        if self.total_rate() <= 0.0 {
            return None;
        }
        let waiting_time = self.sample_waiting_time(rng);
        let (from, to) = self.fire(rng);
        self.state.time += waiting_time;
        Some(Step {
            from,
            to,
            waiting_time,
        })
    }

    /// Runs until the clock passes each of `times` (ascending), calling
    /// `record` with the state in force at that instant. A frozen state is
    /// recorded unchanged at every remaining time.
    pub fn record_at<R: Rng + ?Sized>(
        &mut self,
        times: &[f64],
        rng: &mut R,
        mut record: impl FnMut(f64, &LatticeState),
    ) {
        let mut next = 0;
        while next < times.len() {
            if self.total_rate() <= 0.0 {
                for &t in &times[next..] {
                    record(t, &self.state);
                }
                self.state.time = self.state.time.max(times[times.len() - 1]);
                return;
            }
            let event_time = self.state.time + self.sample_waiting_time(rng);
            while next < times.len() && times[next] < event_time {
                record(times[next], &self.state);
                next += 1;
            }
            if next == times.len() {
                // Exponential clocks are memoryless, so the pending event
                // can be discarded without biasing later use of the state.
                self.state.time = times[times.len() - 1];
                return;
            }
            self.fire(rng);
            self.state.time = event_time;
        }
    }
}

/// Samples an initial state and records snapshots at the schedule's times.
pub fn run_realization<R: Rng + ?Sized>(
    cfg: &LatticeConfig,
    profile: &InitialProfile,
    schedule: &SamplingSchedule,
    rng: &mut R,
) -> KmcTrajectory {
    let init = sample_initial(profile, cfg, rng);
    let mut kmc = Kmc::new(cfg, init);
    let times = schedule.record_times();
    let mut records = Vec::with_capacity(times.len());
    kmc.record_at(&times, rng, |time, s| {
        records.push(Snapshot {
            time,
            occupation: s.occupation.clone(),
        })
    });
    KmcTrajectory { records }
}

impl KmcTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }
}
