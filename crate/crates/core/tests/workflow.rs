//! The whole library chain at toy scale: lattice simulation, coarse
//! graining, training, ensemble prediction.

use gradflow_core::continuum::{ensemble_predict, output_times, EnnGrid, OdeSystem};
use gradflow_core::epinet::{train_epinets, EpinetConfig, EpistemicModel};
use gradflow_core::fe::{build_datasets, estimate_profile, CoarseTrajectory, FeBasis, Projector};
use gradflow_core::lattice::{run_realization, InitialProfile, LatticeConfig, SamplingSchedule};
use gradflow_core::models::{train_f, train_k1, BaseConfig};
use gradflow_core::rng::{stream, Purpose};

fn toy_model(seed: u64) -> (EpistemicModel, FeBasis, Vec<f64>) {
    let cfg = LatticeConfig::long_range(60, 3, 1.0);
    let basis = FeBasis::new(10).unwrap();
    let projector = Projector::new(basis, 60).unwrap();
    let sched = SamplingSchedule::desk_default(&cfg, 30);
    let mut estimates = Vec::new();
    for (row, mean) in [(0u32, 0.35), (1, 0.6)] {
        let profile = InitialProfile::new(1, 0.15, mean).unwrap();
        let trajs: Vec<CoarseTrajectory> = (0..sched.realizations as u32)
            .map(|k| {
                let t = run_realization(
                    &cfg,
                    &profile,
                    &sched,
                    &mut stream(seed, Purpose::Kmc, row, k),
                );
                CoarseTrajectory::from_kmc(&t, &projector)
            })
            .collect();
        estimates
            .push(estimate_profile(&trajs, &basis, &sched, cfg.spacing(), row as usize).unwrap());
    }
    let data = build_datasets(&estimates, &basis);
    assert_eq!(data.operator_count(), 20);

    let net = BaseConfig {
        epochs: 30,
        hidden_width: 8,
        hidden_layers: 2,
        ..BaseConfig::k1_default()
    };
    let (k1, k1_loss) =
        train_k1(&data.k1, &net, &mut stream(seed, Purpose::Training, 0, 0)).unwrap();
    let (f, f_loss) = train_f(
        &data.f,
        &k1,
        &net,
        &mut stream(seed, Purpose::Training, 1, 0),
    )
    .unwrap();
    assert!(k1_loss.iter().chain(&f_loss).all(|l| l.is_finite()));
    let ep = EpinetConfig {
        epochs: 5,
        ..EpinetConfig::default()
    };
    let trained = train_epinets(&k1, &f, &data.k1, &data.f, &ep, seed).unwrap();
    let rho0 = projector.project_density(|x| InitialProfile::new(1, 0.15, 0.5).unwrap().density(x));
    (
        EpistemicModel {
            k1,
            f,
            k1_epinet: trained.k1,
            f_epinet: trained.f,
        },
        basis,
        rho0,
    )
}

#[test]
fn toy_chain_is_reproducible_and_conserves_mass() {
    let (model, basis, rho0) = toy_model(3);
    let grid = EnnGrid::new(&model, 41).unwrap();
    let system = OdeSystem::new(&basis, 1e-5).unwrap();
    let times = output_times(5e-4, 5);
    let ens = ensemble_predict(&grid, &system, &rho0, &times, 8, 3).unwrap();

    let mass = |r: &[f64]| r.iter().sum::<f64>();
    let m0 = mass(&rho0);
    assert_eq!(ens.excluded, 0);
    for member in &ens.members {
        for state in member {
            assert!((mass(state) - m0).abs() <= 1e-10 * m0);
        }
    }
    for ((lo, hi), mean) in ens
        .ci_lo
        .iter()
        .flatten()
        .zip(ens.ci_hi.iter().flatten())
        .zip(ens.mean.iter().flatten())
    {
        assert!(lo <= mean && mean <= hi);
    }

    let (again, _, _) = toy_model(3);
    assert_eq!(
        again.k1.predict(0.3, 0.4).unwrap(),
        model.k1.predict(0.3, 0.4).unwrap()
    );
    let grid2 = EnnGrid::new(&again, 41).unwrap();
    let ens2 = ensemble_predict(&grid2, &system, &rho0, &times, 8, 3).unwrap();
    assert_eq!(ens.members, ens2.members);
}
