//! Helpers shared by the integration test binaries.

use nalgebra::{DMatrix, DVector};

use yo_pinn::autodiff::{gradient, sum, Tape};
use yo_pinn::optim::{lbfgs_minimize, LbfgsConfig, Objective};

/// Minimizes `½(W−W*)ᵀH(W−W*) + α·½‖W‖²` with gradients from the tape.
///
/// Near the minimum the objective is flat below one ulp of its value, so a
/// second pass minimizes the exact expansion about the first result, which
/// differs from the objective only by a constant.
pub fn numerical_minimizer(h: &DMatrix<f64>, w_star: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let d = w_star.len();
    let cfg = LbfgsConfig {
        gtol: 1e-12,
        ftol_rel: 0.0,
        ..LbfgsConfig::default()
    };
    let mut full = (d, |x: &[f64], g: &mut [f64]| {
        let tape = Tape::new();
        let w: Vec<_> = x.iter().map(|&v| tape.var(v)).collect();
        let r: Vec<_> = w.iter().zip(w_star.iter()).map(|(&wi, &si)| wi - si).collect();
        let mut terms = Vec::with_capacity(d * d + d);
        for i in 0..d {
            for j in 0..d {
                terms.push(r[i] * r[j] * (0.5 * h[(i, j)]));
            }
            terms.push(w[i].square() * (0.5 * alpha));
        }
        let f = sum(&tape, &terms);
        g.copy_from_slice(&gradient(f, &w).unwrap());
        f.value()
    });
    let base = lbfgs_minimize(&mut full, &vec![0.0; d], 500, &cfg, |_| Ok(())).unwrap().x;
    let mut g_base = vec![0.0; d];
    full.evaluate(&base, &mut g_base).unwrap();

    let mut local = (d, |e: &[f64], g: &mut [f64]| {
        let tape = Tape::new();
        let e: Vec<_> = e.iter().map(|&v| tape.var(v)).collect();
        let mut terms = Vec::with_capacity(d * d + 2 * d);
        for i in 0..d {
            for j in 0..d {
                terms.push(e[i] * e[j] * (0.5 * h[(i, j)]));
            }
            terms.push(e[i].square() * (0.5 * alpha));
            terms.push(e[i] * g_base[i]);
        }
        let f = sum(&tape, &terms);
        g.copy_from_slice(&gradient(f, &e).unwrap());
        f.value()
    });
    let step = lbfgs_minimize(&mut local, &vec![0.0; d], 500, &cfg, |_| Ok(())).unwrap().x;
    DVector::from_iterator(d, base.iter().zip(&step).map(|(b, s)| b + s))
}
