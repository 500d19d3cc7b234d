//! Stage orchestration with on-disk caching.
//!
//! Each stage has a key: a SHA-256 over the config sections it reads and
//! the keys of the stages it consumes. After a stage writes its outputs,
//! the key goes to `stages/<name>.key`. A later request for the stage
//! reuses the files when the stored key matches and every output exists;
//! otherwise the stage, and whatever it needs, is recomputed. Asking for
//! any stage therefore runs exactly the stale part of the chain.

use std::cell::OnceCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gradflow_core::continuum::{
    baseline_flow, calibrate_f, ensemble_predict_with, output_times, EnnGrid, EnsembleResult,
    OdeSystem, Trajectory, CALIBRATION_DENSITY,
};
use gradflow_core::epinet::{train_epinets, EpistemicModel};
use gradflow_core::fe::{build_datasets, estimate_profile, CoarseTrajectory, Datasets};
use gradflow_core::lattice::{run_realization, sample_initial, Kmc};
use gradflow_core::metrics::{ci_coverage, dynamics_max_rl2e, relative_l2};
use gradflow_core::models::{
    refresh_operator_rows, train_baseline, train_f, train_k1, BaselineModel, FModel, K1Model,
    NoiseLevel,
};
use gradflow_core::rng::{stream, Purpose};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Simulate,
    CoarseGrain,
    TrainK1,
    TrainF,
    TrainEpinets,
    TrainBaseline,
    Predict,
    Lrm,
    Validate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Simulate,
        Stage::CoarseGrain,
        Stage::TrainK1,
        Stage::TrainF,
        Stage::TrainEpinets,
        Stage::TrainBaseline,
        Stage::Predict,
        Stage::Lrm,
        Stage::Validate,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::CoarseGrain => "coarse-grain",
            Stage::TrainK1 => "train-k1",
            Stage::TrainF => "train-f",
            Stage::TrainEpinets => "train-epinets",
            Stage::TrainBaseline => "train-baseline",
            Stage::Predict => "predict",
            Stage::Lrm => "lrm",
            Stage::Validate => "validate",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Config sections read directly by the stage.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Stage::Simulate => &["seed", "lattice", "profiles", "sampling", "fe"],
            Stage::CoarseGrain => &[],
            Stage::TrainK1 => &["k1"],
            Stage::TrainF => &["f"],
            Stage::TrainEpinets => &["epinet"],
            Stage::TrainBaseline => &["baseline"],
            Stage::Predict => &["predict"],
            Stage::Lrm => &["lattice", "fe", "predict"],
            Stage::Validate => &["seed", "lattice", "fe", "predict", "validate"],
            Stage::Evaluate => &["validate"],
        }
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Simulate | Stage::Lrm | Stage::Validate => &[],
            Stage::CoarseGrain => &[Stage::Simulate],
            Stage::TrainK1 => &[Stage::CoarseGrain],
            Stage::TrainF => &[Stage::TrainK1],
            Stage::TrainEpinets => &[Stage::TrainF],
            Stage::TrainBaseline => &[Stage::CoarseGrain],
            Stage::Predict => &[Stage::TrainEpinets],
            Stage::Evaluate => &[
                Stage::Predict,
                Stage::Lrm,
                Stage::Validate,
                Stage::TrainBaseline,
            ],
        }
    }
}

/// Scalar results of an evaluated run, in report order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub entries: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    fn to_key_values(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), format!("{v:?}")))
            .collect()
    }

    fn from_key_values(kv: &[(String, String)], path: &Path) -> Result<Self> {
        let entries = kv
            .iter()
            .map(|(k, v)| {
                v.parse::<f64>()
                    .map(|x| (k.clone(), x))
                    .map_err(|_| CliError::format(path, format!("`{k}` is not a number")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

/// One config, one output directory, and the artifacts loaded so far.
#[derive(Debug)]
pub struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    write_raw: bool,
    coarse: OnceCell<Vec<Vec<CoarseTrajectory>>>,
    datasets: OnceCell<Datasets>,
    k1: OnceCell<K1Model>,
    f: OnceCell<FModel>,
    epistemic: OnceCell<EpistemicModel>,
    baseline: OnceCell<BaselineModel>,
    prediction: OnceCell<EnsembleResult>,
    lrm: OnceCell<EnsembleResult>,
    validation: OnceCell<EnsembleResult>,
    metrics: OnceCell<MetricsReport>,
    timings: std::cell::RefCell<Vec<(String, f64)>>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        for dir in [out.clone(), out.join("stages"), out.join("snapshots")] {
            std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        let write_raw = cfg.output.raw_snapshots;
        Ok(Self {
            cfg,
            out,
            write_raw,
            coarse: OnceCell::new(),
            datasets: OnceCell::new(),
            k1: OnceCell::new(),
            f: OnceCell::new(),
            epistemic: OnceCell::new(),
            baseline: OnceCell::new(),
            prediction: OnceCell::new(),
            lrm: OnceCell::new(),
            validation: OnceCell::new(),
            metrics: OnceCell::new(),
            timings: Default::default(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Forces site-level snapshots to be written by the simulate stage.
    pub fn with_raw_snapshots(mut self) -> Self {
        self.write_raw = true;
        self
    }

    /// Wall-clock seconds of every stage computed (not loaded) so far.
    pub fn timings(&self) -> Vec<(String, f64)> {
        self.timings.borrow().clone()
    }

    pub fn key(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(self.cfg.hash_of(stage.sections()).as_bytes());
        for &up in stage.upstream() {
            h.update(self.key(up).as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn key_path(&self, stage: Stage) -> PathBuf {
        self.out
            .join("stages")
            .join(format!("{}.key", stage.name()))
    }

    pub fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        match stage {
            Stage::Simulate => {
                let mut v = Vec::new();
                for &row in &self.cfg.profiles.rows {
                    v.push(self.snapshot_path(row, "projected"));
                    v.push(self.snapshot_path(row, "hat"));
                    if self.write_raw {
                        v.push(self.snapshot_path(row, "raw"));
                    }
                }
                v
            }
            Stage::CoarseGrain => vec![self.path("dataset_k1.csv"), self.path("dataset_f.csv")],
            Stage::TrainK1 => vec![self.path("k1.ckpt"), self.path("history_k1.txt")],
            Stage::TrainF => vec![self.path("f.ckpt"), self.path("history_f.txt")],
            Stage::TrainEpinets => {
                vec![self.path("epinets.ckpt"), self.path("history_epinets.txt")]
            }
            Stage::TrainBaseline => vec![self.path("baseline.ckpt")],
            Stage::Predict => {
                let mut v = vec![self.path("trajectory.csv")];
                if self.cfg.predict.per_realization {
                    v.push(self.path("trajectory_members.csv"));
                }
                v
            }
            Stage::Lrm => vec![self.path("trajectory_lrm.csv")],
            Stage::Validate => vec![self.path("trajectory_kmc.csv")],
            Stage::Evaluate => vec![
                self.path("metrics.txt"),
                self.path("uniform.csv"),
                self.path("trajectory_base.csv"),
                self.path("trajectory_baseline.csv"),
            ],
        }
    }

    fn snapshot_path(&self, row: usize, kind: &str) -> PathBuf {
        self.out
            .join("snapshots")
            .join(format!("profile_{row:02}_{kind}.csv"))
    }

    pub fn is_fresh(&self, stage: Stage) -> bool {
        let stored = std::fs::read_to_string(self.key_path(stage)).unwrap_or_default();
        stored.trim() == self.key(stage) && self.outputs(stage).iter().all(|p| p.exists())
    }

    fn mark_done(&self, stage: Stage) -> Result<()> {
        let p = self.key_path(stage);
        std::fs::write(&p, format!("{}\n", self.key(stage))).map_err(|e| CliError::io(&p, e))
    }

    /// Loads the stage from disk when fresh, otherwise computes it and
    /// stores its outputs and key. The stale key is removed first so an
    /// interrupted stage never looks finished.
    fn cached<'a, T>(
        &'a self,
        stage: Stage,
        cell: &'a OnceCell<T>,
        load: impl FnOnce(&Self) -> Result<T>,
        compute: impl FnOnce(&Self) -> Result<T>,
    ) -> Result<&'a T> {
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let value = if self.is_fresh(stage) {
            log::info!("{}: cached", stage.name());
            load(self).map_err(|e| e.in_stage(stage.name()))?
        } else {
            let _ = std::fs::remove_file(self.key_path(stage));
            log::info!("{}: running", stage.name());
            let t = Instant::now();
            let v = compute(self).map_err(|e| e.in_stage(stage.name()))?;
            self.mark_done(stage)
                .map_err(|e| e.in_stage(stage.name()))?;
            let secs = t.elapsed().as_secs_f64();
            log::info!("{}: done in {secs:.1}s", stage.name());
            self.timings
                .borrow_mut()
                .push((stage.name().to_string(), secs));
            v
        };
        Ok(cell.get_or_init(|| value))
    }

    /// Coarse-grained trajectories, one list per training profile.
    pub fn simulate(&self) -> Result<&Vec<Vec<CoarseTrajectory>>> {
        self.cached(
            Stage::Simulate,
            &self.coarse,
            |p| {
                p.cfg
                    .profiles
                    .rows
                    .iter()
                    .map(|&row| {
                        io::read_coarse(
                            &p.snapshot_path(row, "projected"),
                            &p.snapshot_path(row, "hat"),
                        )
                    })
                    .collect()
            },
            Self::run_simulation,
        )
    }

    fn run_simulation(&self) -> Result<Vec<Vec<CoarseTrajectory>>> {
        let lattice = self.cfg.lattice_config()?;
        let sched = self.cfg.schedule(&lattice);
        let projector = self.cfg.projector()?;
        let seed = self.cfg.seed;
        let write_raw = self.write_raw;
        let mut all = Vec::new();
        for &row in &self.cfg.profiles.rows {
            let profile = self.cfg.profile(row)?;
            let runs: Vec<_> = (0..sched.realizations)
                .into_par_iter()
                .map(|k| {
                    let mut rng = stream(seed, Purpose::Kmc, row as u32, k as u32);
                    let traj = run_realization(&lattice, &profile, &sched, &mut rng);
                    let coarse = CoarseTrajectory::from_kmc(&traj, &projector);
                    (write_raw.then_some(traj), coarse)
                })
                .collect();
            if self.write_raw {
                let rows = runs
                    .iter()
                    .enumerate()
                    .flat_map(|(k, (t, _))| io::raw_rows(k, t.as_ref().expect("kept")));
                io::write_rows(&self.snapshot_path(row, "raw"), rows)?;
            }
            let coarse: Vec<CoarseTrajectory> = runs.into_iter().map(|(_, c)| c).collect();
            io::write_coarse(
                &self.snapshot_path(row, "projected"),
                &self.snapshot_path(row, "hat"),
                &coarse,
            )?;
            log::info!("simulate: profile {row} done");
            all.push(coarse);
        }
        Ok(all)
    }

    pub fn datasets(&self) -> Result<&Datasets> {
        self.cached(
            Stage::CoarseGrain,
            &self.datasets,
            |p| {
                Ok(Datasets {
                    k1: io::read_k1_dataset(&p.path("dataset_k1.csv"))?,
                    f: io::read_f_dataset(&p.path("dataset_f.csv"))?,
                })
            },
            |p| {
                let coarse = p.simulate()?;
                let lattice = p.cfg.lattice_config()?;
                let sched = p.cfg.schedule(&lattice);
                let basis = p.cfg.basis()?;
                let estimates = coarse
                    .iter()
                    .enumerate()
                    .map(|(i, trajs)| estimate_profile(trajs, &basis, &sched, lattice.spacing(), i))
                    .collect::<gradflow_core::Result<Vec<_>>>()?;
                let data = build_datasets(&estimates, &basis);
                io::write_k1_dataset(&p.path("dataset_k1.csv"), &data.k1)?;
                io::write_f_dataset(&p.path("dataset_f.csv"), &data.f)?;
                Ok(data)
            },
        )
    }

    pub fn k1_model(&self) -> Result<&K1Model> {
        self.cached(
            Stage::TrainK1,
            &self.k1,
            |p| Checkpoint::read(&p.path("k1.ckpt"))?.k1(),
            |p| {
                let data = p.datasets()?;
                let mut rng = stream(p.cfg.seed, Purpose::Training, 0, 0);
                let (model, history) = train_k1(&data.k1, &p.cfg.k1.base(), &mut rng)?;
                let mut c = Checkpoint::new();
                c.put_k1(&model);
                c.write(&p.path("k1.ckpt"))?;
                write_history(&p.path("history_k1.txt"), &history)?;
                Ok(model)
            },
        )
    }

    pub fn f_model(&self) -> Result<&FModel> {
        self.cached(
            Stage::TrainF,
            &self.f,
            |p| Checkpoint::read(&p.path("f.ckpt"))?.f(),
            |p| {
                let k1 = p.k1_model()?;
                let data = p.datasets()?;
                let mut rng = stream(p.cfg.seed, Purpose::Training, 1, 0);
                let (model, history) = train_f(&data.f, k1, &p.cfg.f.base(), &mut rng)?;
                let mut c = Checkpoint::new();
                c.put_f(&model);
                c.write(&p.path("f.ckpt"))?;
                write_history(&p.path("history_f.txt"), &history)?;
                Ok(model)
            },
        )
    }

    pub fn epistemic_model(&self) -> Result<&EpistemicModel> {
        self.cached(
            Stage::TrainEpinets,
            &self.epistemic,
            |p| {
                let c = Checkpoint::read(&p.path("epinets.ckpt"))?;
                Ok(EpistemicModel {
                    k1: p.k1_model()?.clone(),
                    f: p.f_model()?.clone(),
                    k1_epinet: c.epinet("epinet.k1")?,
                    f_epinet: c.epinet("epinet.f")?,
                })
            },
            |p| {
                let k1 = p.k1_model()?;
                let f = p.f_model()?;
                let data = p.datasets()?;
                let mut rows = data.f.clone();
                refresh_operator_rows(&mut rows, |a, b| k1.predict(a, b))?;
                let trained =
                    train_epinets(k1, f, &data.k1, &rows, &p.cfg.epinet.epinet(), p.cfg.seed)?;
                let mut c = Checkpoint::new();
                c.put_epinet("epinet.k1", &trained.k1);
                c.put_epinet("epinet.f", &trained.f);
                c.write(&p.path("epinets.ckpt"))?;
                write_history(&p.path("history_epinets.txt"), &trained.history)?;
                Ok(EpistemicModel {
                    k1: k1.clone(),
                    f: f.clone(),
                    k1_epinet: trained.k1,
                    f_epinet: trained.f,
                })
            },
        )
    }

    pub fn baseline_model(&self) -> Result<&BaselineModel> {
        self.cached(
            Stage::TrainBaseline,
            &self.baseline,
            |p| Checkpoint::read(&p.path("baseline.ckpt"))?.baseline(),
            |p| {
                let data = p.datasets()?;
                let lattice = p.cfg.lattice_config()?;
                let sched = p.cfg.schedule(&lattice);
                let noise = NoiseLevel {
                    realizations: sched.realizations,
                    macro_interval: sched.macro_interval,
                    spacing: lattice.spacing(),
                };
                let mut rng = stream(p.cfg.seed, Purpose::Training, 2, 0);
                let (model, _, _) = train_baseline(
                    &data.k1,
                    &data.f,
                    &p.cfg.baseline.baseline(),
                    noise,
                    &mut rng,
                )?;
                let mut c = Checkpoint::new();
                c.put_baseline(&model);
                c.write(&p.path("baseline.ckpt"))?;
                Ok(model)
            },
        )
    }

    fn times(&self) -> Vec<f64> {
        output_times(self.cfg.predict.t_end, self.cfg.predict.intervals)
    }

    /// Nodal projection of the test profile.
    pub fn initial_state(&self) -> Result<Vec<f64>> {
        let test = self.cfg.test_profile()?;
        Ok(self.cfg.projector()?.project_density(|x| test.density(x)))
    }

    fn system(&self) -> Result<OdeSystem> {
        Ok(OdeSystem::new(&self.cfg.basis()?, self.cfg.predict.dt)?)
    }

    /// Ensemble prediction from the test profile.
    pub fn prediction(&self) -> Result<&EnsembleResult> {
        self.cached(
            Stage::Predict,
            &self.prediction,
            |p| {
                let mut ens = io::read_ensemble(&p.path("trajectory.csv"))?;
                if p.cfg.predict.per_realization {
                    ens.members = io::read_members(&p.path("trajectory_members.csv"))?;
                }
                Ok(ens)
            },
            |p| {
                let model = p.epistemic_model()?;
                let grid = EnnGrid::new(model, p.cfg.predict.grid_points)?;
                let system = p.system()?;
                let rho0 = p.initial_state()?;
                let times = p.times();
                let ens = ensemble_predict_with(
                    &grid,
                    &system,
                    &rho0,
                    &times,
                    p.cfg.predict.members,
                    p.cfg.seed,
                    |m, run| (0..m).into_par_iter().map(run).collect(),
                )?;
                io::write_ensemble(&p.path("trajectory.csv"), &ens)?;
                if p.cfg.predict.per_realization {
                    io::write_members(&p.path("trajectory_members.csv"), &ens)?;
                }
                Ok(ens)
            },
        )
    }

    /// Analytic long-range model from the same initial state.
    pub fn lrm_reference(&self) -> Result<&EnsembleResult> {
        self.cached(
            Stage::Lrm,
            &self.lrm,
            |p| io::read_ensemble(&p.path("trajectory_lrm.csv")),
            |p| {
                let traj =
                    p.cfg
                        .lrm()?
                        .evolve(&p.initial_state()?, &p.times(), p.cfg.predict.dt)?;
                io::write_deterministic(&p.path("trajectory_lrm.csv"), &traj)?;
                Ok(deterministic(traj))
            },
        )
    }

    /// Held-out KMC runs from the test profile, summarized per point.
    pub fn validation(&self) -> Result<&EnsembleResult> {
        self.cached(
            Stage::Validate,
            &self.validation,
            |p| io::read_ensemble(&p.path("trajectory_kmc.csv")),
            |p| {
                let lattice = p.cfg.lattice_config()?;
                let projector = p.cfg.projector()?;
                let test = p.cfg.test_profile()?;
                let times = p.times();
                let seed = p.cfg.seed;
                let runs: Vec<gradflow_core::Result<Trajectory>> = (0..p.cfg.validate.realizations)
                    .into_par_iter()
                    .map(|v| {
                        let mut rng = stream(seed, Purpose::Validation, 0, v as u32);
                        let init = sample_initial(&test, &lattice, &mut rng);
                        let mut kmc = Kmc::new(&lattice, init);
                        let mut states = Vec::with_capacity(times.len());
                        kmc.record_at(&times, &mut rng, |_, s| {
                            states.push(projector.project(&s.occupation))
                        });
                        Ok(Trajectory {
                            times: times.clone(),
                            states,
                        })
                    })
                    .collect();
                let ens = EnsembleResult::aggregate(times.clone(), runs)?;
                io::write_ensemble(&p.path("trajectory_kmc.csv"), &ens)?;
                Ok(ens)
            },
        )
    }

    /// Runs (or loads) every stage and scores the prediction.
    pub fn evaluate(&self) -> Result<&MetricsReport> {
        self.cached(
            Stage::Evaluate,
            &self.metrics,
            |p| {
                let path = p.path("metrics.txt");
                MetricsReport::from_key_values(&io::read_key_values(&path)?, &path)
            },
            Self::run_evaluation,
        )
    }

    fn run_evaluation(&self) -> Result<MetricsReport> {
        let ens = self.prediction()?;
        let lrm_traj = self.lrm_reference()?;
        let kmc = self.validation()?;
        let baseline = self.baseline_model()?;
        let model = self.epistemic_model()?;
        let data = self.datasets()?;
        let lrm = self.cfg.lrm()?;

        // Uniform-density comparison over the range the data covers.
        let (lo, hi) = data
            .k1
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.z_mid), hi.max(s.z_mid))
            });
        let n = self.cfg.validate.grid_points;
        let grid: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let k1_pred = grid
            .iter()
            .map(|&z| model.k1.predict(z, z))
            .collect::<gradflow_core::Result<Vec<_>>>()?;
        let k1_base = grid
            .iter()
            .map(|&z| baseline.k1(z, z))
            .collect::<gradflow_core::Result<Vec<_>>>()?;
        let k1_ref: Vec<f64> = grid.iter().map(|&z| lrm.uniform_k1(z)).collect();
        let c = CALIBRATION_DENSITY;
        let f_cal = calibrate_f(|r| model.f.predict(r), c, c)?;
        let b_cal = calibrate_f(|r| baseline.predict_f(r), c, c)?;
        let l_cal = calibrate_f(
            |r| Ok((lrm.uniform_free_energy(r), lrm.uniform_force(r))),
            c,
            c,
        )?;
        let f_pred = grid
            .iter()
            .map(|&z| Ok(f_cal(z)?.0))
            .collect::<gradflow_core::Result<Vec<_>>>()?;
        let f_base = grid
            .iter()
            .map(|&z| Ok(b_cal(z)?.0))
            .collect::<gradflow_core::Result<Vec<_>>>()?;
        let f_ref = grid
            .iter()
            .map(|&z| Ok(l_cal(z)?.0))
            .collect::<gradflow_core::Result<Vec<_>>>()?;
        let rows = (0..n).map(|i| UniformRow {
            rho: grid[i],
            k1_pred: k1_pred[i],
            k1_baseline: k1_base[i],
            k1_lrm: k1_ref[i],
            f_pred: f_pred[i],
            f_baseline: f_base[i],
            f_lrm: f_ref[i],
        });
        io::write_rows(&self.path("uniform.csv"), rows)?;

        let system = self.system()?;
        let rho0 = self.initial_state()?;
        let times = self.times();
        // The same tabulation the ensemble members use, without epinets.
        let base = EnnGrid::new(model, self.cfg.predict.grid_points)?.base()?;
        let base_traj = system.integrate(&base, &rho0, &times)?;
        io::write_deterministic(&self.path("trajectory_base.csv"), &base_traj)?;
        let baseline_traj = system.integrate(&baseline_flow(baseline), &rho0, &times)?;
        io::write_deterministic(&self.path("trajectory_baseline.csv"), &baseline_traj)?;

        let reference = &lrm_traj.mean;
        let band: f64 = ens
            .ci_hi
            .iter()
            .flatten()
            .zip(ens.ci_lo.iter().flatten())
            .map(|(h, l)| h - l)
            .sum::<f64>()
            / ens.ci_hi.iter().flatten().count() as f64;
        let entries = vec![
            ("k1_rl2e", relative_l2(&k1_pred, &k1_ref)?),
            ("f_rl2e", relative_l2(&f_pred, &f_ref)?),
            ("dynamics_rl2e", dynamics_max_rl2e(&ens.mean, reference)?),
            (
                "base_dynamics_rl2e",
                dynamics_max_rl2e(&base_traj.states, reference)?,
            ),
            ("baseline_k1_rl2e", relative_l2(&k1_base, &k1_ref)?),
            ("baseline_f_rl2e", relative_l2(&f_base, &f_ref)?),
            (
                "baseline_dynamics_rl2e",
                dynamics_max_rl2e(&baseline_traj.states, reference)?,
            ),
            (
                "kmc_dynamics_rl2e",
                dynamics_max_rl2e(&kmc.mean, reference)?,
            ),
            ("ci_coverage_kmc", ci_coverage(ens, &kmc.mean)?),
            ("ci_coverage_lrm", ci_coverage(ens, reference)?),
            ("ci_mean_width", band),
            ("ensemble_excluded", ens.excluded as f64),
            ("density_range_lo", lo),
            ("density_range_hi", hi),
        ];
        let report = MetricsReport {
            entries: entries
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        };
        io::write_key_values(&self.path("metrics.txt"), &report.to_key_values())?;
        Ok(report)
    }

    /// Runs every stage; writes `timings.txt` with the stages computed in
    /// this invocation.
    pub fn run_all(&self) -> Result<&MetricsReport> {
        let report = self.evaluate()?;
        let kv: Vec<(String, String)> = self
            .timings()
            .into_iter()
            .map(|(k, v)| (k, format!("{v:.3}")))
            .collect();
        io::write_key_values(&self.path("timings.txt"), &kv)?;
        Ok(report)
    }
}

#[derive(Debug, serde::Serialize)]
struct UniformRow {
    rho: f64,
    k1_pred: f64,
    k1_baseline: f64,
    k1_lrm: f64,
    f_pred: f64,
    f_baseline: f64,
    f_lrm: f64,
}

fn deterministic(traj: Trajectory) -> EnsembleResult {
    EnsembleResult {
        times: traj.times,
        members: Vec::new(),
        mean: traj.states.clone(),
        std: traj.states.iter().map(|s| vec![0.0; s.len()]).collect(),
        ci_lo: traj.states.clone(),
        ci_hi: traj.states,
        excluded: 0,
    }
}

fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let kv: Vec<(String, String)> = history
        .iter()
        .enumerate()
        .map(|(i, v)| (format!("epoch.{i}"), format!("{v:?}")))
        .collect();
    io::write_key_values(path, &kv)
}
