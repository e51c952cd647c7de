use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use yo_pinn::datagen::{build_grid, lhs_sample, subsample_ib, Domain, TrainingSet};
use yo_pinn::exact_yo::RwParams;
use yo_pinn::loss::batch::PinnObjective;
use yo_pinn::loss::DEFAULT_N_A;
use yo_pinn::network::{init_xavier, Architecture, NetworkParams};
use yo_pinn::optim::{lbfgs_minimize, train, LbfgsConfig, Phase, Termination, TrainConfig};
use yo_pinn::residuals::PhysicsMode;

#[test]
fn lbfgs_finds_the_exact_minimum_of_a_quadratic_quickly() {
    let d = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let h = &a * a.transpose() + DMatrix::identity(d, d);
    let b = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let exact = h.clone().cholesky().unwrap().solve(&b);

    let mut obj = (d, |x: &[f64], g: &mut [f64]| {
        let x = DVector::from_column_slice(x);
        let hx = &h * &x;
        g.copy_from_slice((&hx - &b).as_slice());
        0.5 * x.dot(&hx) - b.dot(&x)
    });
    // Near-exact line searches give the finite-termination behaviour.
    let cfg = LbfgsConfig {
        c1: 1e-7,
        c2: 1e-6,
        gtol: 1e-12,
        ftol_rel: 0.0,
        ..LbfgsConfig::default()
    };
    let report = lbfgs_minimize(&mut obj, &vec![0.0; d], d + 2, &cfg, |_| Ok(())).unwrap();
    let err = (DVector::from_vec(report.x) - exact).amax();
    assert!(err < 1e-10, "{err:e} after {} iterations ({:?})", report.iterations, report.termination);
    assert!(report.iterations <= d + 2);
}

fn setup(mode: PhysicsMode, seed: u64) -> (PinnObjective, NetworkParams) {
    let dom = Domain::new((-5.0, 5.0), (-0.5, 0.5), 32, 9).unwrap();
    let grid = build_grid(&RwParams::bright(), &dom).unwrap();
    let ts = TrainingSet {
        domain: dom,
        ib_points: subsample_ib(&grid.initial_boundary(), 30, seed).unwrap(),
        collocation: lhs_sample(&dom, 60, seed),
        seed,
        noise_level: 0.0,
    };
    let arch = Architecture::new(vec![2, 8, 8, 3]).unwrap();
    let params = init_xavier(&arch, seed);
    let obj = PinnObjective::new(&arch, params.scale(), mode, &ts, 1e-4, DEFAULT_N_A).unwrap();
    (obj, params)
}

#[test]
fn empty_schedule_returns_the_start() {
    let (mut obj, params) = setup(PhysicsMode::forward_yo(), 1);
    let theta = obj.pack(&params);
    let out = train(&mut obj, theta.clone(), &TrainConfig::new(0, 0), Some(1)).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.theta, theta);
    assert_eq!(out.params, params);
}

#[test]
fn training_is_bit_reproducible_and_logs_lambdas() {
    let run = || {
        let (mut obj, params) = setup(PhysicsMode::inverse_from_zero(), 4);
        let theta = obj.pack(&params);
        train(&mut obj, theta, &TrainConfig::new(20, 15), Some(4)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace.iter().filter(|r| r.phase == Phase::Adam).count(), 20);
    assert!(a.trace.iter().all(|r| r.lambdas.is_some()));
    let lbfgs: Vec<f64> = a
        .trace
        .iter()
        .filter(|r| r.phase == Phase::Lbfgs)
        .map(|r| r.loss.total)
        .collect();
    assert!(!lbfgs.is_empty());
    assert!(lbfgs.windows(2).all(|w| w[1] <= w[0]));
    assert!(a.final_loss.total <= a.trace[0].loss.total);
    assert!(matches!(
        a.lbfgs_termination,
        Some(Termination::IterationBudget | Termination::RelativeFTolerance | Termination::GradientTolerance)
    ));
}

#[test]
fn checkpoints_reload_the_trained_network() {
    let dir = tempfile::tempdir().unwrap();
    let (mut obj, params) = setup(PhysicsMode::forward_yo(), 6);
    let theta = obj.pack(&params);
    let cfg = TrainConfig {
        checkpoint_every: 5,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..TrainConfig::new(10, 0)
    };
    let out = train(&mut obj, theta, &cfg, Some(6)).unwrap();
    let (loaded, _) = NetworkParams::load_checkpoint(&dir.path().join("checkpoint-final.json")).unwrap();
    assert_eq!(loaded, out.params);
    assert!(dir.path().join("checkpoint-0000005.json").exists());
}
