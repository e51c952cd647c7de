use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{check_dim, dot, Objective, OptimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    /// Number of stored `(s, y)` pairs.
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    /// Stop when `max |g_i|` drops to this.
    pub gtol: f64,
    /// Stop when `|f_k - f_{k+1}| <= ftol_rel * max(|f_k|, |f_{k+1}|, 1)`.
    pub ftol_rel: f64,
    /// Evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 50,
            c1: 1e-4,
            c2: 0.9,
            gtol: 1e-9,
            ftol_rel: 10.0 * f64::EPSILON,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    RelativeFTolerance,
    IterationBudget,
    /// No acceptable step; the best point so far is returned.
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective after each accepted iteration.
    pub trace: Vec<f64>,
}

/// State handed to the per-iteration callback.
#[derive(Debug)]
pub struct LbfgsIteration<'a> {
    pub iteration: usize,
    pub f: f64,
    pub x: &'a [f64],
    pub grad_inf: f64,
    pub evaluations: usize,
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Limited-memory BFGS with a strong-Wolfe line search.
pub fn lbfgs_minimize<O: Objective + ?Sized>(
    obj: &mut O,
    x0: &[f64],
    max_iters: usize,
    cfg: &LbfgsConfig,
    mut callback: impl FnMut(&LbfgsIteration) -> Result<(), OptimError>,
) -> Result<LbfgsReport, OptimError> {
    check_dim(obj.dim(), x0.len())?;
    if cfg.memory == 0 || !(0.0 < cfg.c1 && cfg.c1 < cfg.c2 && cfg.c2 < 1.0) {
        return Err(OptimError::Config(format!("{cfg:?}")));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.evaluate(&x, &mut g)?;
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteGradient { iteration: 0 });
    }
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(cfg.memory);
    let mut trace = Vec::new();
    let mut d = vec![0.0; n];
    let mut alpha = vec![0.0; cfg.memory];
    let report = |x, f, iterations, evaluations, termination, trace| LbfgsReport {
        x,
        f,
        iterations,
        evaluations,
        termination,
        trace,
    };

    if inf_norm(&g) <= cfg.gtol {
        return Ok(report(x, f, 0, evaluations, Termination::GradientTolerance, trace));
    }
    for k in 1..=max_iters {
        // Two-loop recursion: d = -H g.
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (i, p) in history.iter().enumerate().rev() {
            alpha[i] = p.rho * dot(&p.s, &d);
            d.iter_mut().zip(&p.y).for_each(|(di, yi)| *di -= alpha[i] * yi);
        }
        if let Some(last) = history.back() {
            let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for (i, p) in history.iter().enumerate() {
            let beta = p.rho * dot(&p.y, &d);
            d.iter_mut().zip(&p.s).for_each(|(di, si)| *di += (alpha[i] - beta) * si);
        }
        let mut gtd = dot(&g, &d);
        if !(gtd < 0.0) {
            history.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            gtd = -dot(&g, &g);
        }
        let t0 = if k == 1 {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };

        let ls = strong_wolfe(obj, &x, f, &g, &d, t0, gtd, cfg)?;
        evaluations += ls.evaluations;
        if !(ls.f <= f) || ls.t == 0.0 {
            return Ok(report(x, f, k - 1, evaluations, Termination::LineSearchFailure, trace));
        }

        let s: Vec<f64> = d.iter().map(|di| ls.t * di).collect();
        let y: Vec<f64> = ls.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / ys });
        }
        x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += ls.t * di);
        let f_old = f;
        f = ls.f;
        g = ls.g;
        trace.push(f);
        let grad_inf = inf_norm(&g);
        callback(&LbfgsIteration {
            iteration: k,
            f,
            x: &x,
            grad_inf,
            evaluations,
        })?;
        if grad_inf <= cfg.gtol {
            return Ok(report(x, f, k, evaluations, Termination::GradientTolerance, trace));
        }
        if (f_old - f).abs() <= cfg.ftol_rel * f_old.abs().max(f.abs()).max(1.0) {
            return Ok(report(x, f, k, evaluations, Termination::RelativeFTolerance, trace));
        }
    }
    Ok(report(x, f, max_iters, evaluations, Termination::IterationBudget, trace))
}

/// Minimizer of the cubic through `(x1, f1, g1)` and `(x2, f2, g2)`,
/// clamped to `bounds`; the midpoint when the cubic has no minimizer.
fn cubic_interpolate(
    (x1, f1, g1): (f64, f64, f64),
    (x2, f2, g2): (f64, f64, f64),
    bounds: Option<(f64, f64)>,
) -> f64 {
    let (lo, hi) = bounds.unwrap_or((x1.min(x2), x1.max(x2)));
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    let pos = if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        }
    } else {
        f64::NAN
    };
    if pos.is_finite() {
        pos.clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone)]
pub struct LineSearch {
    pub t: f64,
    pub f: f64,
    pub g: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Clone)]
struct Probe {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

/// Strong-Wolfe line search along `d` from `x` (bracketing, then zoom with
/// safeguarded cubic interpolation). Non-finite trial values count as
/// insufficient decrease.
#[allow(clippy::too_many_arguments)]
pub fn strong_wolfe<O: Objective + ?Sized>(
    obj: &mut O,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    t_init: f64,
    gtd0: f64,
    cfg: &LbfgsConfig,
) -> Result<LineSearch, OptimError> {
    let d_norm = inf_norm(d);
    let mut xt = vec![0.0; x.len()];
    let mut evaluations = 0;
    let mut probe = |t: f64, evaluations: &mut usize| -> Result<Probe, OptimError> {
        xt.iter_mut()
            .zip(x.iter().zip(d))
            .for_each(|(o, (xi, di))| *o = xi + t * di);
        let mut g = vec![0.0; x.len()];
        let mut f = obj.evaluate(&xt, &mut g)?;
        *evaluations += 1;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            f = f64::INFINITY;
        }
        let gtd = if f.is_finite() { dot(&g, d) } else { f64::NAN };
        Ok(Probe { t, f, g, gtd })
    };
    let armijo = |p: &Probe| p.f > f0 + cfg.c1 * p.t * gtd0;
    let curvature = |p: &Probe| p.gtd.abs() <= -cfg.c2 * gtd0;

    let mut prev = Probe {
        t: 0.0,
        f: f0,
        g: g0.to_vec(),
        gtd: gtd0,
    };
    let mut cur = probe(t_init, &mut evaluations)?;
    let mut iters = 0;
    let mut bracket: Vec<Probe> = Vec::new();
    let mut done = false;
    while iters < cfg.max_line_search {
        if armijo(&cur) || (iters > 1 && cur.f >= prev.f) || !cur.f.is_finite() {
            bracket = vec![prev.clone(), cur.clone()];
            break;
        }
        if curvature(&cur) {
            bracket = vec![cur.clone()];
            done = true;
            break;
        }
        if cur.gtd >= 0.0 {
            bracket = vec![prev.clone(), cur.clone()];
            break;
        }
        let lo = cur.t + 0.01 * (cur.t - prev.t);
        let hi = cur.t * 10.0;
        let t = cubic_interpolate(
            (prev.t, prev.f, prev.gtd),
            (cur.t, cur.f, cur.gtd),
            Some((lo, hi)),
        );
        prev = std::mem::replace(&mut cur, probe(t, &mut evaluations)?);
            iters += 1;
    }
    if iters == cfg.max_line_search {
        bracket = vec![prev.clone(), cur.clone()];
    }

    let mut insufficient = false;
    let (mut low, mut high) = if bracket.len() == 2 && bracket[0].f > bracket[1].f {
        (1, 0)
    } else {
        (0, 1)
    };
    while !done && iters < cfg.max_line_search && bracket.len() == 2 {
        let (b_lo, b_hi) = (
            bracket[0].t.min(bracket[1].t),
            bracket[0].t.max(bracket[1].t),
        );
        if (b_hi - b_lo) * d_norm < 1e-15 * (1.0 + b_hi.abs()) {
            break;
        }
        let ends = (&bracket[0], &bracket[1]);
        let mut t = if ends.0.f.is_finite() && ends.1.f.is_finite() {
            cubic_interpolate((ends.0.t, ends.0.f, ends.0.gtd), (ends.1.t, ends.1.f, ends.1.gtd), None)
        } else {
            0.5 * (b_lo + b_hi)
        };
        let eps = 0.1 * (b_hi - b_lo);
        if (b_hi - t).min(t - b_lo) < eps {
            if insufficient || t >= b_hi || t <= b_lo {
                t = if (t - b_hi).abs() < (t - b_lo).abs() {
                    b_hi - eps
                } else {
                    b_lo + eps
                };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }
        let p = probe(t, &mut evaluations)?;
        iters += 1;
        if armijo(&p) || p.f >= bracket[low].f {
            bracket[high] = p;
        } else {
            if curvature(&p) {
                done = true;
            } else if p.gtd * (bracket[high].t - bracket[low].t) >= 0.0 {
                bracket[high] = bracket[low].clone();
            }
            bracket[low] = p;
        }
        if bracket[0].f > bracket[1].f {
            (low, high) = (1, 0);
        } else {
            (low, high) = (0, 1);
        }
    }
    let best = bracket.swap_remove(low);
    Ok(LineSearch {
        t: best.t,
        f: best.f,
        g: best.g,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock() -> (usize, impl FnMut(&[f64], &mut [f64]) -> f64) {
        (2, |x: &[f64], g: &mut [f64]| {
            let (a, b) = (1.0 - x[0], x[1] - x[0] * x[0]);
            g[0] = -2.0 * a - 400.0 * x[0] * b;
            g[1] = 200.0 * b;
            a * a + 100.0 * b * b
        })
    }

    #[test]
    fn rosenbrock_within_100_iterations() {
        let mut obj = rosenbrock();
        let r = lbfgs_minimize(&mut obj, &[-1.2, 1.0], 100, &LbfgsConfig::default(), |_| Ok(())).unwrap();
        assert!(r.f < 1e-8, "{r:?}");
        assert!(r.iterations <= 100);
    }

    #[test]
    fn trace_is_non_increasing() {
        let mut obj = rosenbrock();
        let r = lbfgs_minimize(&mut obj, &[-1.2, 1.0], 100, &LbfgsConfig::default(), |_| Ok(())).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.trace.len(), r.iterations);
    }

    #[test]
    fn starting_at_the_minimum_takes_no_iterations() {
        let mut obj = rosenbrock();
        let r = lbfgs_minimize(&mut obj, &[1.0, 1.0], 10, &LbfgsConfig::default(), |_| Ok(())).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.termination, Termination::GradientTolerance);
    }

    #[test]
    fn iteration_budget_is_respected() {
        let mut obj = rosenbrock();
        let r = lbfgs_minimize(&mut obj, &[-1.2, 1.0], 3, &LbfgsConfig::default(), |_| Ok(())).unwrap();
        assert_eq!((r.iterations, r.termination), (3, Termination::IterationBudget));
    }

    #[test]
    fn ascent_only_objective_fails_gracefully() {
        // The reported gradient points the wrong way, so no step decreases f.
        let mut obj = (1, |x: &[f64], g: &mut [f64]| {
            g[0] = -x[0];
            0.5 * x[0] * x[0]
        });
        let r = lbfgs_minimize(&mut obj, &[1.0], 10, &LbfgsConfig::default(), |_| Ok(())).unwrap();
        assert_eq!(r.termination, Termination::LineSearchFailure);
        assert_eq!(r.x, vec![1.0]);
    }

    #[test]
    fn wolfe_conditions_hold_on_a_quartic() {
        let mut obj = (1, |x: &[f64], g: &mut [f64]| {
            g[0] = 4.0 * (x[0] - 3.0).powi(3);
            (x[0] - 3.0).powi(4)
        });
        let cfg = LbfgsConfig::default();
        let g0 = [4.0 * (-27.0)];
        let d = [1.0];
        let ls = strong_wolfe(&mut obj, &[0.0], 81.0, &g0, &d, 1.0, g0[0], &cfg).unwrap();
        assert!(ls.f <= 81.0 + cfg.c1 * ls.t * g0[0]);
        assert!(ls.g[0].abs() <= cfg.c2 * g0[0].abs());
    }

    #[test]
    fn cubic_interpolation_is_exact_for_quadratics() {
        let q = |x: f64| ((x - 0.7) * (x - 0.7), 2.0 * (x - 0.7));
        let (f1, g1) = q(0.0);
        let (f2, g2) = q(2.0);
        let t = cubic_interpolate((0.0, f1, g1), (2.0, f2, g2), None);
        assert!((t - 0.7).abs() < 1e-14);
    }

    #[test]
    fn non_finite_trials_are_backed_off() {
        let mut obj = (1, |x: &[f64], g: &mut [f64]| {
            if x[0] > 1.5 {
                return f64::NAN;
            }
            g[0] = 2.0 * (x[0] - 1.0);
            (x[0] - 1.0).powi(2)
        });
        let cfg = LbfgsConfig::default();
        let ls = strong_wolfe(&mut obj, &[0.0], 1.0, &[-2.0], &[1.0], 10.0, -2.0, &cfg).unwrap();
        assert!(ls.f.is_finite() && ls.f < 1.0 && ls.t <= 1.5);
    }
}
