//! Training objective.
//!
//! `total = Loss_S + Loss_L + Loss_fS + Loss_fL + Loss_a + alpha * Omega`,
//! where the first two terms fit initial/boundary data, the next two
//! penalise PDE residuals at collocation points, `Loss_a` is the slope
//! recovery term and `Omega = ½ Σ w²` runs over every weight-matrix entry
//! (biases, slopes and the inverse-mode coefficients are not penalised).
//!
//! The functions here build the objective on an autodiff [`Tape`]. Training
//! uses [`batch::PinnObjective`], a fused batched evaluator of the same
//! objective and its gradient.

pub mod batch;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{sum, AdError, DiffValue, Tape};
use crate::datagen::{IbPoint, TrainingSet};
use crate::network::{forward, NetworkError, NetworkParams, ParamVars};
use crate::residuals::{residuals_at, Coefficients, ResidualError};

/// Default slope-recovery weight `N_a`.
pub const DEFAULT_N_A: f64 = 100.0;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("no initial/boundary points")]
    EmptyData,
    #[error("no collocation points")]
    EmptyCollocation,
    #[error("loss term {term} is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_s: f64,
    pub loss_l: f64,
    pub loss_fs: f64,
    pub loss_fl: f64,
    pub loss_a: f64,
    pub penalty: f64,
    pub alpha: f64,
    pub n_a: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(
        [loss_s, loss_l, loss_fs, loss_fl, loss_a, penalty]: [f64; 6],
        alpha: f64,
        n_a: f64,
    ) -> Self {
        Self {
            loss_s,
            loss_l,
            loss_fs,
            loss_fl,
            loss_a,
            penalty,
            alpha,
            n_a,
            total: loss_s + loss_l + loss_fs + loss_fl + loss_a + alpha * penalty,
        }
    }

    /// The objective without the weight penalty.
    pub fn unregularized(&self) -> f64 {
        self.loss_s + self.loss_l + self.loss_fs + self.loss_fl + self.loss_a
    }

    pub fn check_finite(&self) -> Result<(), LossError> {
        let terms = [
            ("Loss_S", self.loss_s),
            ("Loss_L", self.loss_l),
            ("Loss_fS", self.loss_fs),
            ("Loss_fL", self.loss_fl),
            ("Loss_a", self.loss_a),
            ("Omega", self.penalty),
            ("total", self.total),
        ];
        match terms.into_iter().find(|(_, v)| !v.is_finite()) {
            Some((term, value)) => Err(LossError::NonFinite { term, value }),
            None => Ok(()),
        }
    }
}

/// Mean squared misfit on labelled points: `(Loss_S, Loss_L)`.
pub fn data_loss<'t>(
    tape: &'t Tape,
    params: &ParamVars<'t>,
    points: &[IbPoint],
) -> Result<(DiffValue<'t>, DiffValue<'t>), LossError> {
    if points.is_empty() {
        return Err(LossError::EmptyData);
    }
    let mut s_terms = Vec::with_capacity(points.len());
    let mut l_terms = Vec::with_capacity(points.len());
    for p in points {
        let [u, v, l] = forward(params, tape.constant(p.x), tape.constant(p.t))?;
        s_terms.push((u - p.u).square() + (v - p.v).square());
        l_terms.push((l - p.l).square());
    }
    let inv = 1.0 / points.len() as f64;
    Ok((
        sum(tape, &s_terms).scale(inv),
        sum(tape, &l_terms).scale(inv),
    ))
}

/// Mean squared PDE residuals: `(Loss_fS, Loss_fL)`.
pub fn residual_loss<'t>(
    tape: &'t Tape,
    params: &ParamVars<'t>,
    coefficients: &Coefficients<'t>,
    collocation: &[[f64; 2]],
) -> Result<(DiffValue<'t>, DiffValue<'t>), LossError> {
    if collocation.is_empty() {
        return Err(LossError::EmptyCollocation);
    }
    let mut s_terms = Vec::with_capacity(collocation.len());
    let mut l_terms = Vec::with_capacity(collocation.len());
    for &[x, t] in collocation {
        let r = residuals_at(params, coefficients, tape.var(x), tape.var(t))?;
        s_terms.push(r.f_u.square() + r.f_v.square());
        l_terms.push(r.f_l.square());
    }
    let inv = 1.0 / collocation.len() as f64;
    Ok((
        sum(tape, &s_terms).scale(inv),
        sum(tape, &l_terms).scale(inv),
    ))
}

/// Slope recovery term `1 / ((N_a / (D-1)) Σ_d exp(mean_i a_i^d))`.
pub fn slope_recovery<'t>(tape: &'t Tape, params: &ParamVars<'t>, n_a: f64) -> DiffValue<'t> {
    let exps: Vec<_> = params
        .slopes()
        .map(|a| sum(tape, a).scale(1.0 / a.len() as f64).exp())
        .collect();
    let hidden = exps.len() as f64;
    sum(tape, &exps).scale(n_a / hidden).recip()
}

/// `½ Σ w²` over all weight-matrix entries.
pub fn l2_penalty<'t>(tape: &'t Tape, params: &ParamVars<'t>) -> DiffValue<'t> {
    let squares: Vec<_> = params.weights().map(|w| w.square()).collect();
    sum(tape, &squares).scale(0.5)
}

/// Every term on the tape, with the differentiable total.
pub fn total_loss<'t>(
    tape: &'t Tape,
    params: &ParamVars<'t>,
    coefficients: &Coefficients<'t>,
    ts: &TrainingSet,
    alpha: f64,
    n_a: f64,
) -> Result<(LossBreakdown, DiffValue<'t>), LossError> {
    let (loss_s, loss_l) = data_loss(tape, params, &ts.ib_points)?;
    let (loss_fs, loss_fl) = residual_loss(tape, params, coefficients, &ts.collocation)?;
    let loss_a = slope_recovery(tape, params, n_a);
    let penalty = l2_penalty(tape, params);
    let total = loss_s + loss_l + loss_fs + loss_fl + loss_a + penalty.scale(alpha);
    let breakdown = LossBreakdown {
        total: total.value(),
        ..LossBreakdown::new(
            [loss_s, loss_l, loss_fs, loss_fl, loss_a, penalty].map(|v| v.value()),
            alpha,
            n_a,
        )
    };
    breakdown.check_finite()?;
    Ok((breakdown, total))
}

/// `Loss_a` for plain parameters.
pub fn slope_recovery_value(params: &NetworkParams, n_a: f64) -> f64 {
    let (sum_exp, hidden) = slope_exp_sum(params);
    1.0 / (n_a / hidden * sum_exp)
}

fn slope_exp_sum(params: &NetworkParams) -> (f64, f64) {
    let mut sum_exp = 0.0;
    let mut hidden = 0.0;
    for a in params.layers().iter().filter_map(|l| l.slopes.as_ref()) {
        sum_exp += a.mean().expect("non-empty layer").exp();
        hidden += 1.0;
    }
    (sum_exp, hidden)
}

/// Closed-form `∂Loss_a/∂a_i^d`, one vector per hidden layer.
pub fn slope_recovery_grad(params: &NetworkParams, n_a: f64) -> Vec<Vec<f64>> {
    let (sum_exp, hidden) = slope_exp_sum(params);
    let q = n_a / hidden * sum_exp;
    params
        .layers()
        .iter()
        .filter_map(|l| l.slopes.as_ref())
        .map(|a| {
            let coef = -(n_a / hidden) * a.mean().unwrap().exp() / (q * q * a.len() as f64);
            vec![coef; a.len()]
        })
        .collect()
}

pub fn l2_penalty_value(params: &NetworkParams) -> f64 {
    0.5 * params
        .layers()
        .iter()
        .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient;
    use crate::datagen::Domain;
    use crate::network::{init_xavier, Architecture};
    use crate::residuals::PhysicsMode;

    #[test]
    fn breakdown_total_and_alpha() {
        let b = LossBreakdown::new([0.1, 0.2, 0.3, 0.4, 0.5, 10.0], 1e-4, 100.0);
        assert!((b.total - (1.5 + 1e-3)).abs() < 1e-15);
        assert_eq!(b.alpha * b.penalty, 1e-3);
        let b0 = LossBreakdown::new([0.1, 0.2, 0.3, 0.4, 0.5, 10.0], 0.0, 100.0);
        assert_eq!(b0.total, b0.unregularized());
        let bad = LossBreakdown::new([0.1, f64::NAN, 0.3, 0.4, 0.5, 10.0], 0.0, 100.0);
        assert!(matches!(
            bad.check_finite(),
            Err(LossError::NonFinite { term: "Loss_L", .. })
        ));
    }

    fn one_neuron_params(out_bias: [f64; 3]) -> NetworkParams {
        let arch = Architecture::new(vec![2, 1, 3]).unwrap();
        let mut p = init_xavier(&arch, 0);
        for l in p.layers_mut() {
            l.weights.fill(0.0);
        }
        let last = &mut p.layers_mut()[1].bias;
        for (b, v) in last.iter_mut().zip(out_bias) {
            *b = v;
        }
        p
    }

    #[test]
    fn single_point_data_loss() {
        let p = one_neuron_params([0.1, 0.0, 0.2]);
        let tape = Tape::new();
        let pv = ParamVars::new(&tape, &p);
        let pts = [IbPoint {
            x: 0.3,
            t: 0.1,
            u: 0.0,
            v: 0.0,
            l: 0.0,
        }];
        let (s, l) = data_loss(&tape, &pv, &pts).unwrap();
        assert!((s.value() - 0.01).abs() < 1e-17);
        assert!((l.value() - 0.04).abs() < 1e-17);

        let doubled = [pts[0], pts[0]];
        let (s2, l2) = data_loss(&tape, &pv, &doubled).unwrap();
        assert_eq!((s2.value(), l2.value()), (s.value(), l.value()));
        assert!(matches!(data_loss(&tape, &pv, &[]), Err(LossError::EmptyData)));
    }

    #[test]
    fn zero_network_residual_loss_vanishes() {
        let p = one_neuron_params([0.0; 3]);
        let tape = Tape::new();
        let pv = ParamVars::new(&tape, &p);
        let c = PhysicsMode::forward_yo().on_tape(&tape);
        let (fs, fl) = residual_loss(&tape, &pv, &c, &[[0.1, 0.2], [-1.0, 0.4]]).unwrap();
        assert_eq!((fs.value(), fl.value()), (0.0, 0.0));
        assert!(matches!(
            residual_loss(&tape, &pv, &c, &[]),
            Err(LossError::EmptyCollocation)
        ));
    }

    #[test]
    fn slope_recovery_at_init_is_depth_independent() {
        let expected = 1.0 / (100.0 * 0.1f64.exp());
        for depth in [1, 3, 9] {
            let p = init_xavier(&Architecture::uniform(depth, 7).unwrap(), 1);
            assert!((slope_recovery_value(&p, 100.0) - expected).abs() < 1e-12);
            let tape = Tape::new();
            let pv = ParamVars::new(&tape, &p);
            assert!((slope_recovery(&tape, &pv, 100.0).value() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_recovery_vanishes_for_large_slopes() {
        let mut p = init_xavier(&Architecture::uniform(2, 4).unwrap(), 1);
        let before = slope_recovery_value(&p, 100.0);
        p.layers_mut()[0].slopes.as_mut().unwrap().fill(50.0);
        let after = slope_recovery_value(&p, 100.0);
        assert!(after < before * 1e-6);
    }

    #[test]
    fn l2_penalty_values() {
        let mut p = one_neuron_params([0.0; 3]);
        assert_eq!(l2_penalty_value(&p), 0.0);
        p.layers_mut()[0].weights[[0, 1]] = 3.0;
        assert_eq!(l2_penalty_value(&p), 4.5);
        let tape = Tape::new();
        let pv = ParamVars::new(&tape, &p);
        assert_eq!(l2_penalty(&tape, &pv).value(), 4.5);
    }

    #[test]
    fn l2_gradient_is_the_weights() {
        let arch = Architecture::new(vec![2, 5, 4, 3]).unwrap();
        let p = init_xavier(&arch, 8);
        let tape = Tape::new();
        let pv = ParamVars::new(&tape, &p);
        let flat = pv.flat();
        let g = gradient(l2_penalty(&tape, &pv), &flat).unwrap();
        let values = p.to_flat();
        let weights: std::collections::HashSet<_> = arch.weight_indices().into_iter().collect();
        for i in 0..flat.len() {
            let want = if weights.contains(&i) { values[i] } else { 0.0 };
            assert_eq!(g[i], want);
        }
    }

    #[test]
    fn total_is_monotone_in_alpha() {
        let arch = Architecture::new(vec![2, 4, 3]).unwrap();
        let p = init_xavier(&arch, 2);
        let dom = Domain::new((-1.0, 1.0), (0.0, 1.0), 3, 3).unwrap();
        let ts = TrainingSet {
            domain: dom,
            ib_points: vec![IbPoint {
                x: 0.5,
                t: 0.0,
                u: 1.0,
                v: 0.2,
                l: -0.3,
            }],
            collocation: vec![[0.1, 0.4], [0.7, 0.9]],
            seed: 0,
            noise_level: 0.0,
        };
        let mut last = f64::NEG_INFINITY;
        for alpha in [0.0, 1e-4, 1e-2, 1.0] {
            let tape = Tape::new();
            let pv = ParamVars::new(&tape, &p);
            let c = PhysicsMode::forward_yo().on_tape(&tape);
            let (b, total) = total_loss(&tape, &pv, &c, &ts, alpha, DEFAULT_N_A).unwrap();
            assert_eq!(b.total, total.value());
            assert!(b.total >= last);
            last = b.total;
        }
    }
}
