use serde::{Deserialize, Serialize};

use super::{check_dim, Objective, OptimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    pub fn new(dim: usize, cfg: AdamConfig) -> Result<Self, OptimError> {
        let ok = cfg.lr > 0.0
            && (0.0..1.0).contains(&cfg.beta1)
            && (0.0..1.0).contains(&cfg.beta2)
            && cfg.eps > 0.0;
        if !ok {
            return Err(OptimError::Config(format!("{cfg:?}")));
        }
        Ok(Self {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One update of `x` along `grad`. A non-finite gradient leaves `x`
    /// and the moments untouched.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<(), OptimError> {
        check_dim(self.m.len(), x.len())?;
        check_dim(self.m.len(), grad.len())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient {
                iteration: self.step + 1,
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// Runs `iters` Adam steps. `callback(step, f, x)` sees the value at the
/// point the step starts from.
pub fn adam_minimize<O: Objective + ?Sized>(
    obj: &mut O,
    x: &mut [f64],
    iters: usize,
    cfg: AdamConfig,
    mut callback: impl FnMut(usize, f64, &[f64]) -> Result<(), OptimError>,
) -> Result<Adam, OptimError> {
    check_dim(obj.dim(), x.len())?;
    let mut adam = Adam::new(x.len(), cfg)?;
    let mut grad = vec![0.0; x.len()];
    for k in 1..=iters {
        let f = obj.evaluate(x, &mut grad)?;
        if !f.is_finite() {
            return Err(OptimError::NonFiniteGradient { iteration: k });
        }
        callback(k, f, x)?;
        adam.step(x, &grad)?;
    }
    Ok(adam)
}
