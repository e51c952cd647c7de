//! Quick self-checks behind the `verify` and `selftest` commands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{check_gradient_fd, gradient, Tape};
use crate::datagen::{build_grid, inject_noise, lhs_sample, stratum, value_std, Domain, TrainingSet};
use crate::exact_yo::{
    box_points, derive_rw_parameters, eval_bright_bright, eval_general_rw, intermediate_k, dark_k,
    verify_pde_residual, RwParams,
};
use crate::loss::batch::PinnObjective;
use crate::loss::{slope_recovery_value, total_loss, DEFAULT_N_A};
use crate::network::{forward, init_xavier, Architecture, ParamVars};
use crate::optim::{lbfgs_minimize, LbfgsConfig};
use crate::residuals::PhysicsMode;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    Check {
        name,
        passed: value < limit,
        detail: format!("{value:.3e} < {limit:.0e}"),
    }
}

/// Closed-form rogue-wave checks.
pub fn verify_exact() -> Vec<Check> {
    let mut out = Vec::new();
    let p = RwParams::bright();
    let dev = (p.m + 0.5).abs().max((p.n - 3f64.sqrt() / 2.0).abs());
    out.push(check("bright parameters m = -1/2, n = sqrt(3)/2", dev, 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let worst = (0..10_000)
        .map(|_| {
            let (x, t) = (rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0));
            let (a, b) = (eval_bright_bright(x, t), eval_general_rw(&p, x, t));
            (a.u - b.u).abs().max((a.v - b.v).abs()).max((a.l - b.l).abs())
        })
        .fold(0.0, f64::max);
    out.push(check("bright pair equals general family at k = 0", worst, 1e-12));

    let points = box_points((-5.0, 5.0), (-2.0, 2.0), 41, 17);
    for (name, k) in [
        ("PDE residual, bright", 0.0),
        ("PDE residual, intermediate", intermediate_k()),
        ("PDE residual, dark", dark_k()),
    ] {
        let rw = derive_rw_parameters(1.0, 0.0, k).expect("family exists");
        out.push(check(name, verify_pde_residual(&rw, &points, 1e-3), 1e-6));
    }
    let c = eval_bright_bright(0.0, 0.0);
    let peak = (c.modulus() - 2.0).abs().max((c.l - 6.0).abs());
    out.push(check("bright peak |S| = 2, L = 6", peak, 1e-14));
    out
}

/// Fast property checks of the training machinery.
pub fn selftest() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let worst = (0..5)
        .map(|s| {
            let arch = Architecture::new(vec![2, 8, 3]).unwrap();
            let params = init_xavier(&arch, s);
            let point = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            check_gradient_fd(
                |tape, v| {
                    let pv = ParamVars::new(tape, &params);
                    let [u, vv, l] = forward(&pv, v[0], v[1]).expect("finite");
                    u * vv + l
                },
                &point,
                1e-5,
            )
            .unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max);
    out.push(check("autodiff gradient vs finite differences", worst, 1e-6));

    let tape = Tape::new();
    let x = tape.var(1.3);
    let g = gradient(x.powi(4), &[x]).unwrap()[0];
    out.push(check("d/dx x^4 at 1.3", (g - 4.0 * 1.3f64.powi(3)).abs(), 1e-12));

    let dom = Domain::new((-5.0, 5.0), (-2.0, 2.0), 64, 32).unwrap();
    let n = 1000;
    let pts = lhs_sample(&dom, n, 9);
    let mut hits = vec![0usize; n];
    pts.iter().for_each(|p| hits[stratum(p[0], dom.x_lo, dom.x_hi, n)] += 1);
    let bad = hits.iter().filter(|&&h| h != 1).count();
    out.push(check("LHS stratification (strata with != 1 point)", bad as f64, 0.5));

    let grid = build_grid(&RwParams::bright(), &dom).unwrap();
    let ib = grid.initial_boundary();
    let clean = TrainingSet {
        domain: dom,
        ib_points: ib.clone(),
        collocation: pts,
        seed: 0,
        noise_level: 0.0,
    };
    let noisy = inject_noise(&clean, 0.05, 2).unwrap();
    let diffs: Vec<_> = noisy
        .ib_points
        .iter()
        .zip(&ib)
        .map(|(a, b)| crate::datagen::IbPoint {
            u: a.u - b.u,
            v: a.v - b.v,
            l: a.l - b.l,
            ..*a
        })
        .collect();
    let ratio = value_std(&diffs) / (0.05 * value_std(&ib));
    out.push(check("noise std relative to target", (ratio - 1.0).abs(), 0.05));

    let deep = init_xavier(&Architecture::uniform(7, 10).unwrap(), 1);
    let expected = 1.0 / (100.0 * 0.1f64.exp());
    out.push(check(
        "slope recovery at initialisation",
        (slope_recovery_value(&deep, DEFAULT_N_A) - expected).abs(),
        1e-12,
    ));

    let arch = Architecture::new(vec![2, 6, 6, 3]).unwrap();
    let params = init_xavier(&arch, 3);
    let small = TrainingSet {
        ib_points: ib.into_iter().step_by(20).collect(),
        collocation: lhs_sample(&dom, 16, 4),
        ..clean
    };
    let mode = PhysicsMode::Inverse {
        lambda1: 0.2,
        lambda2: 0.6,
    };
    let tape = Tape::new();
    let pv = ParamVars::new(&tape, &params);
    let c = mode.on_tape(&tape);
    let mismatch = match total_loss(&tape, &pv, &c, &small, 1e-3, DEFAULT_N_A) {
        Ok((_, total)) => {
            let mut wrt = pv.flat();
            wrt.extend([c.lambda1, c.lambda2]);
            let want = gradient(total, &wrt).unwrap();
            let mut obj = PinnObjective::new(&arch, params.scale(), mode, &small, 1e-3, DEFAULT_N_A).unwrap();
            let theta = obj.pack(&params);
            let mut got = vec![0.0; theta.len()];
            obj.evaluate(&theta, &mut got).unwrap();
            got.iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                .fold(0.0, f64::max)
        }
        Err(_) => f64::INFINITY,
    };
    out.push(check("batched gradient vs tape gradient", mismatch, 1e-10));

    let mut rosen = (2, |x: &[f64], g: &mut [f64]| {
        let (a, b) = (1.0 - x[0], x[1] - x[0] * x[0]);
        g[0] = -2.0 * a - 400.0 * x[0] * b;
        g[1] = 200.0 * b;
        a * a + 100.0 * b * b
    });
    let f = lbfgs_minimize(&mut rosen, &[-1.2, 1.0], 100, &LbfgsConfig::default(), |_| Ok(()))
        .map_or(f64::INFINITY, |r| r.f);
    out.push(check("L-BFGS on Rosenbrock, 100 iterations", f, 1e-8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in verify_exact().into_iter().chain(selftest()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
