//! Weight-decay analytics checked against closed forms.

mod common;

use common::numerical_minimizer;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use yo_pinn::autodiff::{gradient, Tape};
use yo_pinn::datagen::{build_grid, lhs_sample, Domain, TrainingSet};
use yo_pinn::exact_yo::RwParams;
use yo_pinn::loss::batch::PinnObjective;
use yo_pinn::loss::{total_loss, DEFAULT_N_A};
use yo_pinn::network::{init_xavier, Architecture, NetworkParams, ParamVars};
use yo_pinn::residuals::PhysicsMode;

const ALPHAS: [f64; 3] = [1e-4, 1e-2, 1.0];

fn tiny_set(seed: u64) -> TrainingSet {
    let dom = Domain::new((-5.0, 5.0), (-2.0, 2.0), 16, 8).unwrap();
    let grid = build_grid(&RwParams::bright(), &dom).unwrap();
    TrainingSet {
        domain: dom,
        ib_points: grid.initial_boundary().into_iter().step_by(3).collect(),
        collocation: lhs_sample(&dom, 8, seed),
        seed,
        noise_level: 0.0,
    }
}

fn tape_gradient(params: &NetworkParams, ts: &TrainingSet, alpha: f64) -> Vec<f64> {
    let tape = Tape::new();
    let pv = ParamVars::new(&tape, params);
    let c = PhysicsMode::forward_yo().on_tape(&tape);
    let (_, total) = total_loss(&tape, &pv, &c, ts, alpha, DEFAULT_N_A).unwrap();
    gradient(total, &pv.flat()).unwrap()
}

/// Weight-block update of one plain gradient step, in both forms.
fn step_mismatch(w: f64, g_total: f64, g_plain: f64, eta: f64, alpha: f64) -> f64 {
    let stepped = w - eta * g_total;
    let shrunk = (1.0 - eta * alpha) * w - eta * g_plain;
    (stepped - shrunk).abs() / (w.abs() + eta * g_plain.abs()).max(1e-300)
}

#[test]
fn gradient_step_shrinks_weights_multiplicatively() {
    let eta = 1e-3;
    for seed in 0..10u64 {
        let hidden = 6 + (seed as usize % 3);
        let arch = Architecture::new(vec![2, hidden, 3]).unwrap();
        assert!((40..=60).contains(&arch.n_params()), "{}", arch.n_params());
        let params = init_xavier(&arch, seed);
        let ts = tiny_set(seed);
        let weights = arch.weight_indices();
        let flat = params.to_flat();
        let plain = tape_gradient(&params, &ts, 0.0);
        for alpha in ALPHAS {
            let reg = tape_gradient(&params, &ts, alpha);
            for &i in &weights {
                let rel = step_mismatch(flat[i], reg[i], plain[i], eta, alpha);
                assert!(rel < 8.0 * f64::EPSILON, "seed {seed} alpha {alpha} idx {i}: {rel:e}");
            }
            let is_weight: Vec<bool> = (0..flat.len()).map(|i| weights.contains(&i)).collect();
            for (i, w) in is_weight.iter().enumerate() {
                if !w {
                    assert_eq!(reg[i], plain[i], "non-weight entry {i} changed with alpha");
                }
            }
        }
    }
}

#[test]
fn batched_gradient_has_the_same_step_identity() {
    let eta = 1e-2;
    let arch = Architecture::new(vec![2, 7, 3]).unwrap();
    let params = init_xavier(&arch, 77);
    let ts = tiny_set(77);
    let grad = |alpha: f64| {
        let mut obj =
            PinnObjective::new(&arch, params.scale(), PhysicsMode::forward_yo(), &ts, alpha, DEFAULT_N_A).unwrap();
        let theta = obj.pack(&params);
        let mut g = vec![0.0; theta.len()];
        obj.evaluate(&theta, &mut g).unwrap();
        g
    };
    let plain = grad(0.0);
    let flat = params.to_flat();
    for alpha in ALPHAS {
        let reg = grad(alpha);
        for i in arch.weight_indices() {
            assert!(step_mismatch(flat[i], reg[i], plain[i], eta, alpha) < 8.0 * f64::EPSILON);
        }
    }
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

#[test]
fn regularized_quadratic_minimizer_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for d in [1, 3, 8, 13, 20] {
        let h = random_spd(&mut rng, d);
        let w_star = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let eig = SymmetricEigen::new(h.clone());
        for alpha in ALPHAS {
            let w = numerical_minimizer(&h, &w_star, alpha);
            let shifted = &h + DMatrix::identity(d, d) * alpha;
            let oracle = shifted.lu().solve(&(&h * &w_star)).unwrap();
            let err = (&w - &oracle).amax();
            assert!(err < 1e-8, "d {d} alpha {alpha}: {err:e}");

            let q = &eig.eigenvectors;
            let (w_eig, star_eig) = (q.transpose() * &w, q.transpose() * &w_star);
            for i in 0..d {
                let lam = eig.eigenvalues[i];
                let want = lam / (lam + alpha) * star_eig[i];
                assert!((w_eig[i] - want).abs() < 1e-8, "d {d} alpha {alpha} axis {i}");
            }
        }
    }
}
