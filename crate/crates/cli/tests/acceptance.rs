//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! the terminal (bypassing the test harness capture) and then asserts.
//!
//! Criteria 3c and 6 to 9 share one desk-scale pipeline run in
//! `$CARGO_TARGET_TMPDIR/acceptance-desk`. The directory is wiped first so
//! the recorded runtime is end to end; set `GRADFLOW_ACCEPTANCE_REUSE=1` to
//! keep cached stages between runs instead.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use gradflow_cli::{MetricsReport, Pipeline, RunConfig, Scenario};
use gradflow_core::continuum::{
    base_flow, calibrate_f, ensemble_predict, output_times, rk4_integrate, EnnGrid, LocalFlow,
    OdeSystem, CALIBRATION_DENSITY, GRID_POINTS,
};
use gradflow_core::diffusion::{cosine_schedule, ddim_step, ddpm_step, forward_noise};
use gradflow_core::epinet::{enn_predict, EpistemicModel};
use gradflow_core::fe::{estimate_profile, CoarseTrajectory, FeBasis, Projector};
use gradflow_core::lattice::{
    run_realization, InitialProfile, Kmc, LatticeConfig, LatticeState, MasterEquation,
    SamplingSchedule,
};
use gradflow_core::lrm::LrmConfig;
use gradflow_core::metrics::relative_l2;
use gradflow_core::models::{assemble_operator, g, K1Model};
use gradflow_core::nn::{Mlp, MlpSpec};
use gradflow_core::rng::{normal, stream, Purpose};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;
use rayon::prelude::*;

fn report(n: u32, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {n}: {verdict} | {detail}");
}

struct Desk {
    cfg: RunConfig,
    metrics: MetricsReport,
    seconds: f64,
    model: EpistemicModel,
    lrm: LrmConfig,
    /// Uniform-density grid over the training range.
    grid: Vec<f64>,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let mut cfg = RunConfig::preset(Scenario::Desk);
        cfg.output_dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk");
        if std::env::var_os("GRADFLOW_ACCEPTANCE_REUSE").is_none() {
            let _ = std::fs::remove_dir_all(&cfg.output_dir);
        }
        let t = Instant::now();
        let pipeline = Pipeline::new(cfg.clone()).expect("valid desk config");
        let metrics = pipeline.run_all().expect("desk pipeline").clone();
        let seconds = t.elapsed().as_secs_f64();
        let model = pipeline.epistemic_model().expect("trained").clone();
        let (lo, hi) = (
            metrics.get("density_range_lo").unwrap(),
            metrics.get("density_range_hi").unwrap(),
        );
        let n = cfg.validate.grid_points;
        let grid = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let lrm = cfg.lrm().unwrap();
        Desk {
            cfg,
            metrics,
            seconds,
            model,
            lrm,
            grid,
        }
    })
}

#[test]
fn criterion_1_kmc_matches_master_equation() {
    let t = Instant::now();
    let cfg = LatticeConfig::non_interacting(4);
    let me = MasterEquation::new(&cfg, 2).unwrap();
    let pi = me.stationary().unwrap();
    let start = vec![1, 1, 0, 0];

    let samples = 100_000;
    let times: Vec<f64> = (0..samples).map(|i| 1.0 + 0.5 * i as f64).collect();
    let mut counts = vec![0usize; me.states().len()];
    let mut kmc = Kmc::new(&cfg, LatticeState::new(start.clone()));
    kmc.record_at(
        &times,
        &mut stream(11, Purpose::Validation, 0, 0),
        |_, s| {
            counts[me.index(&s.occupation).unwrap()] += 1;
        },
    );
    let tv: f64 = 0.5
        * counts
            .iter()
            .zip(&pi)
            .map(|(&c, p)| (c as f64 / samples as f64 - p).abs())
            .sum::<f64>();

    let checkpoints = [0.005, 0.02, 0.08];
    let runs = 20_000;
    let mut occ = vec![vec![0.0; 4]; checkpoints.len()];
    for r in 0..runs {
        let mut kmc = Kmc::new(&cfg, LatticeState::new(start.clone()));
        let mut k = 0;
        kmc.record_at(
            &checkpoints,
            &mut stream(11, Purpose::Validation, 1, r),
            |_, s| {
                for (o, &e) in occ[k].iter_mut().zip(&s.occupation) {
                    *o += f64::from(e) / runs as f64;
                }
                k += 1;
            },
        );
    }
    let mut p0 = vec![0.0; me.states().len()];
    p0[me.index(&start).unwrap()] = 1.0;
    let mut max_err = 0.0f64;
    for (k, &tk) in checkpoints.iter().enumerate() {
        let exact = me.marginals(&me.propagate(&p0, tk));
        for (a, b) in occ[k].iter().zip(&exact) {
            max_err = max_err.max((a - b).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = tv < 0.02 && max_err < 0.02 && secs < 60.0;
    report(
        1,
        pass,
        format!(
            "TV = {tv:.4} (< 0.02), marginal max error = {max_err:.4} (< 0.02), {secs:.1}s (< 60s)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_fluctuation_dissipation_recovers_free_mobility() {
    let t = Instant::now();
    let cfg = LatticeConfig::non_interacting(400);
    let basis = FeBasis::new(25).unwrap();
    let projector = Projector::new(basis, 400).unwrap();
    let sched = SamplingSchedule::desk_default(&cfg, 1000);
    let d = cfg.diffusion_coefficient();
    let (mut pred, mut exact) = (Vec::new(), Vec::new());
    for (pi, mean) in [0.2, 0.35, 0.5, 0.65, 0.8].into_iter().enumerate() {
        let profile = InitialProfile::new(1, 0.02, mean).unwrap();
        let trajs: Vec<CoarseTrajectory> = (0..sched.realizations)
            .into_par_iter()
            .map(|k| {
                let traj = run_realization(
                    &cfg,
                    &profile,
                    &sched,
                    &mut stream(21, Purpose::Kmc, pi as u32, k as u32),
                );
                CoarseTrajectory::from_kmc(&traj, &projector)
            })
            .collect();
        let est = estimate_profile(&trajs, &basis, &sched, cfg.spacing(), pi).unwrap();
        for s in &est.operator {
            let rho = 0.5 * (s.z_mid + s.z_right);
            pred.push(s.k1);
            exact.push(-d * rho * (1.0 - rho) / basis.spacing());
        }
    }
    let err = relative_l2(&pred, &exact).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = err < 0.10 && secs < 600.0;
    report(
        2,
        pass,
        format!(
            "K1 RL2E vs -Dρ(1-ρ)/Δx = {err:.4} (< 0.10) over {} samples, {secs:.1}s",
            pred.len()
        ),
    );
    assert!(pass);
}

fn uniform_k1_error(model: &K1Model, lrm: &LrmConfig, grid: &[f64], steps: usize) -> f64 {
    let pred: Vec<f64> = grid
        .iter()
        .map(|&z| g(model.pass_with_steps(z, z, steps).unwrap().raw))
        .collect();
    let exact: Vec<f64> = grid.iter().map(|&z| lrm.uniform_k1(z)).collect();
    relative_l2(&pred, &exact).unwrap()
}

#[test]
fn criterion_3_diffusion_machinery() {
    let sched = cosine_schedule(50).unwrap();
    let mut rng = stream(31, Purpose::Validation, 0, 0);
    let mut step_gap = 0.0f64;
    for omega in 1..=50 {
        for _ in 0..20 {
            let (y, y_hat, z) = (2.0 * normal(&mut rng), normal(&mut rng), normal(&mut rng));
            let a = ddim_step(y, y_hat, omega, omega - 1, &sched, 1.0, z);
            let b = ddpm_step(y, y_hat, omega, &sched, z);
            step_gap = step_gap.max((a - b).abs());
        }
    }

    let y0 = 0.7;
    let n = 100_000;
    let mut moment_err = 0.0f64;
    for omega in [1, 10, 25, 40, 50] {
        let ab = sched.alpha_bar(omega);
        let (m, m2) = (ab.sqrt() * y0, ab * y0 * y0 + 1.0 - ab);
        let draws: Vec<f64> = (0..n)
            .map(|_| forward_noise(y0, omega, &sched, normal(&mut rng)))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let second = draws.iter().map(|v| v * v).sum::<f64>() / n as f64;
        moment_err = moment_err
            .max((mean - m).abs() / m2.sqrt())
            .max((second - m2).abs() / m2);
    }

    let d = desk();
    let e2 = uniform_k1_error(&d.model.k1, &d.lrm, &d.grid, 2);
    let e50 = uniform_k1_error(&d.model.k1, &d.lrm, &d.grid, 50);
    let pass = step_gap <= 1e-10 && moment_err < 0.01 && (e2 - e50).abs() < 1e-3;
    report(
        3,
        pass,
        format!(
            "max |DDIM(η=1) − DDPM| = {step_gap:.1e} (≤ 1e-10), forward-noise moment error = {:.3}% (< 1%), K1 RL2E 2-step {e2:.4} vs 50-step {e50:.4}, change {:.1e} (< 1e-3)",
            100.0 * moment_err,
            (e2 - e50).abs()
        ),
    );
    assert!(pass);
}

/// Largest relative discrepancy between reverse-mode gradients and central
/// differences for one random network, input and output cotangent.
fn gradient_discrepancy(widths: Vec<usize>, seed: u64) -> f64 {
    let mut rng = stream(seed, Purpose::Init, 41, 0);
    let net = Mlp::xavier(MlpSpec::new(widths.clone()).unwrap(), &mut rng);
    let input: Vec<f64> = (0..widths[0])
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let cot: Vec<f64> = (0..widths[widths.len() - 1])
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let loss = |net: &Mlp, x: &[f64]| -> f64 {
        net.eval(x)
            .unwrap()
            .iter()
            .zip(&cot)
            .map(|(o, c)| o * c)
            .sum()
    };

    let mut trace = net.trace();
    net.forward(&input, &mut trace).unwrap();
    let mut grad = vec![0.0; net.param_count()];
    let mut input_grad = vec![0.0; input.len()];
    net.backward(&mut trace, &cot, &mut grad, Some(&mut input_grad))
        .unwrap();

    let h = 1e-5;
    let mut fd = vec![0.0; grad.len()];
    for (i, slot) in fd.iter_mut().enumerate() {
        let (mut up, mut down) = (net.clone(), net.clone());
        up.params_mut()[i] += h;
        down.params_mut()[i] -= h;
        *slot = (loss(&up, &input) - loss(&down, &input)) / (2.0 * h);
    }
    let mut fd_in = vec![0.0; input.len()];
    for (i, slot) in fd_in.iter_mut().enumerate() {
        let (mut up, mut down) = (input.clone(), input.clone());
        up[i] += h;
        down[i] -= h;
        *slot = (loss(&net, &up) - loss(&net, &down)) / (2.0 * h);
    }
    // The tangent-mode input gradient must agree as well.
    let mut tangent_in = vec![0.0; input.len()];
    for (i, slot) in tangent_in.iter_mut().enumerate() {
        *slot = net
            .input_gradient(&input, i)
            .unwrap()
            .iter()
            .zip(&cot)
            .map(|(d, c)| d * c)
            .sum();
    }
    let rel = |a: &[f64], b: &[f64]| {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
        num / den
    };
    rel(&grad, &fd)
        .max(rel(&input_grad, &fd_in))
        .max(rel(&tangent_in, &fd_in))
}

#[test]
fn criterion_4_gradients_match_finite_differences() {
    let mut runner = TestRunner::new(PropConfig {
        cases: 100,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let worst = std::sync::Mutex::new(0.0f64);
    let strategy = (1usize..5, 1usize..9, 1usize..4, 1usize..3, any::<u64>());
    let result = runner.run(&strategy, |(input, hidden, depth, output, seed)| {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(hidden).take(depth));
        widths.push(output);
        let d = gradient_discrepancy(widths, seed);
        let mut w = worst.lock().unwrap();
        *w = w.max(d);
        prop_assert!(d < 1e-5, "relative discrepancy {d}");
        Ok(())
    });
    let worst = *worst.lock().unwrap();
    let pass = result.is_ok();
    report(
        4,
        pass,
        format!("100 random networks, worst relative gradient error {worst:.2e} (< 1e-5)"),
    );
    assert!(pass, "{result:?}");
}

#[test]
fn criterion_5_structure_preservation() {
    // Operators from random fields and random negative-valued K1 closures.
    let mut rng = stream(51, Purpose::Validation, 0, 0);
    let (mut sym_err, mut row_err, mut min_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    for n in [3usize, 5, 8, 16, 25, 32] {
        for _ in 0..20 {
            let rho: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
            let (a, b, c) = (
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
            );
            let k = assemble_operator(&rho, |x, y| Ok(g(a * x * y + b * (x + y) + c))).unwrap();
            let dense = DMatrix::from_fn(n, n, |i, j| k.get(i, j));
            sym_err = sym_err.max((&dense - dense.transpose()).amax());
            let scale = dense.amax().max(1e-300);
            for i in 0..n {
                row_err = row_err.max(dense.row(i).sum().abs() / scale);
            }
            min_eig = min_eig.min(dense.symmetric_eigen().eigenvalues.min() / scale);
        }
    }

    let g_max = (0..10_000)
        .map(|i| g(-60.0 + 120.0 * i as f64 / 9_999.0))
        .fold(f64::NEG_INFINITY, f64::max);

    // Mass conservation along the LRM and the learned flow.
    let d = desk();
    let pipeline_cfg = &d.cfg;
    let basis = pipeline_cfg.basis().unwrap();
    let test = pipeline_cfg.test_profile().unwrap();
    let rho0 = pipeline_cfg
        .projector()
        .unwrap()
        .project_density(|x| test.density(x));
    let system = OdeSystem::new(&basis, pipeline_cfg.predict.dt).unwrap();
    let t_end = pipeline_cfg.predict.t_end;
    let times = output_times(t_end, 10);
    let mass = |r: &[f64]| r.iter().sum::<f64>() * basis.spacing();
    let m0 = mass(&rho0);
    let mut drift = 0.0f64;
    for traj in [
        system.integrate(&d.lrm, &rho0, &times).unwrap(),
        system
            .integrate(&base_flow(&d.model.k1, &d.model.f), &rho0, &times)
            .unwrap(),
    ] {
        for (t, s) in traj.times.iter().zip(&traj.states).skip(1) {
            drift = drift.max((mass(s) - m0).abs() / m0 / t);
        }
    }

    // Temporal order of RK4 on the LRM right-hand side.
    let horizon = 1e-3;
    let run = |dt: f64| {
        rk4_integrate(|y| system.rhs(&d.lrm, y), &rho0, dt, &[0.0, horizon])
            .unwrap()
            .states[1]
            .clone()
    };
    let reference = run(horizon / 640.0);
    let err = |dt: f64| relative_l2(&run(dt), &reference).unwrap();
    let (e1, e2) = (err(horizon / 20.0), err(horizon / 40.0));
    let ratio = e1 / e2;

    let pass = sym_err == 0.0
        && row_err < 1e-12
        && min_eig >= -1e-10
        && g_max < 0.0
        && drift < 1e-8
        && (14.0..=18.0).contains(&ratio);
    report(
        5,
        pass,
        format!(
            "asymmetry {sym_err:.1e}, max |row sum|/max|K| {row_err:.1e}, min eigenvalue/max|K| {min_eig:.1e} (≥ -1e-10), max g = {g_max:.2e} (< 0), mass drift {drift:.1e}/time (< 1e-8), RK4 error ratio {ratio:.2} (in [14, 18])"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_desk_scale_end_to_end() {
    let d = desk();
    let k1 = d.metrics.get("k1_rl2e").unwrap();
    let f = d.metrics.get("f_rl2e").unwrap();
    let dynamics = d.metrics.get("dynamics_rl2e").unwrap();
    let minutes = d.seconds / 60.0;
    let pass = k1 < 0.05 && f < 0.08 && dynamics < 0.03 && minutes < 30.0;
    report(
        6,
        pass,
        format!(
            "K̄1 RL2E {k1:.4} (< 0.05), f̄ RL2E {f:.4} (< 0.08), ensemble-mean dynamics RL2E {dynamics:.4} (< 0.03), pipeline {minutes:.1} min (< 30)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_uncertainty_sanity() {
    let d = desk();
    let coverage = d.metrics.get("ci_coverage_kmc").unwrap();

    // κ = 0 with a zeroed learnable head: the ENN is the base model.
    let mut zero = d.model.clone();
    for ep in [&mut zero.k1_epinet, &mut zero.f_epinet] {
        ep.prior_scale = 0.0;
        ep.learnable.zero_output_layer();
    }
    let grid = EnnGrid::new(&zero, GRID_POINTS).unwrap();
    let basis = d.cfg.basis().unwrap();
    let system = OdeSystem::new(&basis, d.cfg.predict.dt).unwrap();
    let test = d.cfg.test_profile().unwrap();
    let rho0 = d
        .cfg
        .projector()
        .unwrap()
        .project_density(|x| test.density(x));
    let times = output_times(d.cfg.predict.t_end, d.cfg.predict.intervals);
    let ens = ensemble_predict(&grid, &system, &rho0, &times, 16, 7).unwrap();
    let base = system
        .integrate(&grid.base().unwrap(), &rho0, &times)
        .unwrap();
    // Members must reproduce the base run bit for bit; the ensemble
    // statistics are sums over members, so allow them rounding.
    let members_are_base = ens.members.iter().all(|m| *m == base.states);
    let max_gap = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    let zero_width =
        max_gap(&ens.ci_lo, &ens.ci_hi) <= 1e-14 && ens.std.iter().flatten().all(|&s| s <= 1e-14);
    let mean_is_base = members_are_base && max_gap(&ens.mean, &base.states) <= 1e-14;
    let mut rng = stream(71, Purpose::Validation, 0, 0);
    let mut pointwise = true;
    for _ in 0..50 {
        let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let pass = zero.k1.pass(a, b).unwrap();
        let phi: Vec<f64> = (0..zero.k1_epinet.index_dim())
            .map(|_| normal(&mut rng))
            .collect();
        pointwise &=
            enn_predict(pass.raw, &zero.k1_epinet, &pass.features, &phi).unwrap() == pass.raw;
        let fp = zero.f.pass(a).unwrap();
        let phi: Vec<f64> = (0..zero.f_epinet.index_dim())
            .map(|_| normal(&mut rng))
            .collect();
        pointwise &= enn_predict(fp.f, &zero.f_epinet, &fp.features, &phi).unwrap() == fp.f;
    }

    let pass = coverage >= 0.8 && zero_width && mean_is_base && pointwise;
    report(
        7,
        pass,
        format!(
            "KMC coverage of the 95% band {:.1}% (≥ 80%), κ = 0: zero-width band {zero_width}, mean ≡ base {mean_is_base}, pointwise ENN ≡ base {pointwise}",
            100.0 * coverage
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_calibration_invariance() {
    let d = desk();
    let f = &d.model.f;
    let k1 = &d.model.k1;
    let c = CALIBRATION_DENSITY;
    let cal = calibrate_f(|r| f.predict(r), c, c).unwrap();
    let (f0, q0) = cal(c).unwrap();

    let basis = d.cfg.basis().unwrap();
    let system = OdeSystem::new(&basis, d.cfg.predict.dt).unwrap();
    let raw = LocalFlow {
        k1: |a, b| k1.predict(a, b),
        q: |r| Ok(f.predict(r)?.1),
    };
    let calibrated = LocalFlow {
        k1: |a, b| k1.predict(a, b),
        q: |r| Ok(cal(r)?.1),
    };
    let mut rng = stream(81, Purpose::Validation, 0, 0);
    let mut worst = 0.0f64;
    let mut fields: Vec<Vec<f64>> = vec![{
        let test = d.cfg.test_profile().unwrap();
        d.cfg
            .projector()
            .unwrap()
            .project_density(|x| test.density(x))
    }];
    fields.extend((0..10).map(|_| {
        (0..basis.nodes())
            .map(|_| rng.random_range(0.1..0.9))
            .collect()
    }));
    for rho in &fields {
        let a = system.rhs(&raw, rho).unwrap();
        let b = system.rhs(&calibrated, rho).unwrap();
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    let pass = f0 == 0.0 && q0 == 0.0 && worst <= 1e-12;
    report(8, pass, format!("f̄(0.5) = {f0:e}, f̄′(0.5) = {q0:e}, max rhs change {worst:.1e} (≤ 1e-12, relative to max(1, |rhs|))"));
    assert!(pass);
}

#[test]
fn criterion_9_noisier_scenario_direction() {
    let d = desk();
    let ours = d.metrics.get("dynamics_rl2e").unwrap();
    let baseline = d.metrics.get("baseline_dynamics_rl2e").unwrap();
    let base = d.metrics.get("base_dynamics_rl2e").unwrap();
    let r = d.cfg.sampling.realizations;
    let pass = ours <= baseline;
    report(
        9,
        pass,
        format!(
            "R = {r}: ensemble dynamics RL2E {ours:.4} ≤ deterministic baseline {baseline:.4} \
             (base models alone {base:.4})"
        ),
    );
    assert!(pass);
}
