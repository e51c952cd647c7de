use proptest::prelude::*;

use yo_pinn::autodiff::{gradient, Tape};
use yo_pinn::datagen::{build_grid, inject_noise, lhs_sample, subsample_ib, Domain, TrainingSet};
use yo_pinn::exact_yo::{eval_general_rw, RwParams};
use yo_pinn::experiment::{prepare_data, ExperimentConfig, Kind};
use yo_pinn::loss::batch::PinnObjective;
use yo_pinn::loss::{total_loss, DEFAULT_N_A};
use yo_pinn::network::{init_xavier, Architecture, ParamVars};
use yo_pinn::residuals::PhysicsMode;

#[test]
fn grid_nodes_equal_the_closed_form() {
    let dom = Domain::new((-5.0, 5.0), (-3.0, 3.0), 40, 25).unwrap();
    for rw in [RwParams::bright(), RwParams::intermediate(), RwParams::dark()] {
        let grid = build_grid(&rw, &dom).unwrap();
        for it in 0..dom.nt {
            for ix in 0..dom.nx {
                let p = grid.point(ix, it);
                let e = eval_general_rw(&rw, p.x, p.t);
                assert_eq!([p.u, p.v, p.l].map(f64::to_bits), [e.u, e.v, e.l].map(f64::to_bits));
            }
        }
    }
}

#[test]
fn noisy_training_set_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let dom = Domain::new((-5.0, 5.0), (-0.5, 0.5), 30, 10).unwrap();
    let grid = build_grid(&RwParams::bright(), &dom).unwrap();
    let clean = TrainingSet {
        domain: dom,
        ib_points: subsample_ib(&grid.initial_boundary(), 40, 3).unwrap(),
        collocation: lhs_sample(&dom, 50, 3),
        seed: 3,
        noise_level: 0.0,
    };
    let noisy = inject_noise(&clean, 0.02, 9).unwrap();
    noisy.save(dir.path()).unwrap();
    assert_eq!(TrainingSet::load(dir.path()).unwrap(), noisy);
}

#[test]
fn prepared_data_depends_only_on_the_data_seed() {
    let mut cfg = ExperimentConfig::desk(Kind::Inverse);
    cfg.noise = 0.02;
    cfg.data_seed = Some(99);
    let (_, a) = prepare_data(&cfg).unwrap();
    cfg.seed += 1;
    cfg.alpha = 0.0;
    let (_, b) = prepare_data(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!((a.ib_points.len(), a.collocation.len()), (cfg.n_q, cfg.n_f));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn batched_objective_matches_the_tape(
        seed in any::<u64>(),
        w1 in 2usize..7,
        w2 in 2usize..7,
        alpha in prop::sample::select(vec![0.0, 1e-4, 1e-2]),
        inverse in any::<bool>(),
        l1 in -1.0..1.0f64,
        l2 in -1.0..1.0f64,
    ) {
        let dom = Domain::new((-5.0, 5.0), (-2.0, 2.0), 20, 10).unwrap();
        let grid = build_grid(&RwParams::bright(), &dom).unwrap();
        let ts = TrainingSet {
            domain: dom,
            ib_points: subsample_ib(&grid.initial_boundary(), 12, seed).unwrap(),
            collocation: lhs_sample(&dom, 9, seed),
            seed,
            noise_level: 0.0,
        };
        let arch = Architecture::new(vec![2, w1, w2, 3]).unwrap();
        let params = init_xavier(&arch, seed);
        let mode = if inverse {
            PhysicsMode::Inverse { lambda1: l1, lambda2: l2 }
        } else {
            PhysicsMode::forward_yo()
        };

        let tape = Tape::new();
        let pv = ParamVars::new(&tape, &params);
        let c = mode.on_tape(&tape);
        let (want_terms, total) = total_loss(&tape, &pv, &c, &ts, alpha, DEFAULT_N_A).unwrap();
        let mut wrt = pv.flat();
        if inverse {
            wrt.extend([c.lambda1, c.lambda2]);
        }
        let want = gradient(total, &wrt).unwrap();

        let mut obj = PinnObjective::new(&arch, params.scale(), mode, &ts, alpha, DEFAULT_N_A)
            .unwrap()
            .with_chunk(4);
        let theta = obj.pack(&params);
        let mut got = vec![0.0; theta.len()];
        let terms = obj.evaluate(&theta, &mut got).unwrap();
        prop_assert!((terms.total - want_terms.total).abs() <= 1e-12 * want_terms.total);
        prop_assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
    }
}
