//! Full-batch minimizers over a flat parameter vector.

mod adam;
mod lbfgs;
mod train;

pub use adam::{adam_minimize, Adam, AdamConfig};
pub use lbfgs::{
    lbfgs_minimize, strong_wolfe, LbfgsConfig, LbfgsIteration, LbfgsReport, LineSearch, Termination,
};
pub use train::{
    train, write_trace_csv, Phase, Schedule, TraceRecord, TrainConfig, TrainError, TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("vector of length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid optimizer setting: {0}")]
    Config(String),
    #[error("objective failed: {0}")]
    Objective(String),
}

/// A differentiable scalar function of a flat vector.
///
/// A non-finite return value marks a point the line search must avoid;
/// hard failures are reported through `Err`.
pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimError>;
}

impl<F> Objective for (usize, F)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimError> {
        Ok((self.1)(x, grad))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<(), OptimError> {
    if expected != got {
        return Err(OptimError::Dimension { expected, got });
    }
    Ok(())
}
