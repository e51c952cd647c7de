use std::cell::RefCell;
use std::collections::VecDeque;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{adam_minimize, lbfgs_minimize, AdamConfig, LbfgsConfig, Objective, OptimError, Termination};
use crate::loss::batch::PinnObjective;
use crate::loss::{LossBreakdown, LossError};
use crate::network::{NetworkError, NetworkParams};
use crate::residuals::PhysicsMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub adam_iters: usize,
    pub lbfgs_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: Schedule,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lbfgs: LbfgsConfig,
    /// Iterations between checkpoints (counted over both phases).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Where checkpoints go; none are written without it.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_checkpoint_every() -> usize {
    5000
}

impl TrainConfig {
    pub fn new(adam_iters: usize, lbfgs_iters: usize) -> Self {
        Self {
            schedule: Schedule {
                adam_iters,
                lbfgs_iters,
            },
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            checkpoint_every: default_checkpoint_every(),
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    Lbfgs,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub loss: LossBreakdown,
    /// Current `(λ₁, λ₂)` in inverse mode.
    pub lambdas: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub params: NetworkParams,
    pub mode: PhysicsMode,
    pub trace: Vec<TraceRecord>,
    pub final_loss: LossBreakdown,
    pub lbfgs_termination: Option<Termination>,
    pub evaluations: usize,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{source} (checkpoint: {checkpoint:?})")]
    Aborted {
        source: OptimError,
        checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

type Recent = RefCell<VecDeque<(Vec<f64>, LossBreakdown)>>;

/// Adapter that remembers the breakdown of recent evaluations so the
/// optimizer callbacks can log it without re-evaluating.
struct Tracked<'a> {
    obj: &'a mut PinnObjective,
    recent: &'a Recent,
    evaluations: usize,
}

fn lookup(recent: &Recent, x: &[f64]) -> Option<LossBreakdown> {
    recent
        .borrow()
        .iter()
        .rev()
        .find(|(p, _)| p.as_slice() == x)
        .map(|(_, b)| *b)
}

impl Objective for Tracked<'_> {
    fn dim(&self) -> usize {
        self.obj.dim()
    }

    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimError> {
        self.evaluations += 1;
        match self.obj.evaluate(x, grad) {
            Ok(b) => {
                let mut recent = self.recent.borrow_mut();
                if recent.len() == 32 {
                    recent.pop_front();
                }
                recent.push_back((x.to_vec(), b));
                Ok(b.total)
            }
            Err(LossError::NonFinite { .. } | LossError::Network(NetworkError::NonFinite { .. })) => {
                grad.iter_mut().for_each(|g| *g = f64::NAN);
                Ok(f64::INFINITY)
            }
            Err(e) => Err(OptimError::Objective(e.to_string())),
        }
    }
}

/// Adam phase then L-BFGS phase from `theta`, logging every iteration.
pub fn train(
    obj: &mut PinnObjective,
    theta: Vec<f64>,
    cfg: &TrainConfig,
    seed: Option<u64>,
) -> Result<TrainOutcome, TrainError> {
    let mut theta = theta;
    let mut trace = Vec::with_capacity(cfg.schedule.adam_iters + cfg.schedule.lbfgs_iters);
    let trainable = obj.mode().is_trainable();
    let unpacker = obj.unpacker();
    let lambdas_of = |x: &[f64]| trainable.then(|| unpacker.lambdas(x));
    let checkpoint = |x: &[f64], tag: &str| -> Option<PathBuf> {
        let dir = cfg.checkpoint_dir.as_ref()?;
        let path = dir.join(format!("checkpoint-{tag}.json"));
        let (params, mode) = unpacker.unpack(x).ok()?;
        params
            .save_checkpoint(&path, seed, trainable.then(|| mode.lambdas()))
            .ok()?;
        Some(path)
    };
    let every = cfg.checkpoint_every.max(1);
    let recent = Recent::default();
    let mut tracked = Tracked {
        obj,
        recent: &recent,
        evaluations: 0,
    };

    let mut last_good = theta.clone();
    let adam = adam_minimize(&mut tracked, &mut theta, cfg.schedule.adam_iters, cfg.adam, |k, _, x| {
        let loss = lookup(&recent, x).expect("evaluated before the callback");
        trace.push(TraceRecord {
            iteration: k,
            phase: Phase::Adam,
            loss,
            lambdas: lambdas_of(x),
        });
        last_good.copy_from_slice(x);
        if k % every == 0 {
            checkpoint(x, &format!("{k:07}"));
        }
        Ok(())
    });
    if let Err(source) = adam {
        return Err(TrainError::Aborted {
            source,
            checkpoint: checkpoint(&last_good, "abort"),
        });
    }

    let mut lbfgs_termination = None;
    if cfg.schedule.lbfgs_iters > 0 {
        let offset = cfg.schedule.adam_iters;
        last_good.copy_from_slice(&theta);
        let result = lbfgs_minimize(&mut tracked, &theta, cfg.schedule.lbfgs_iters, &cfg.lbfgs, |it| {
            let k = offset + it.iteration;
            let loss = lookup(&recent, it.x).expect("accepted point was evaluated");
            trace.push(TraceRecord {
                iteration: k,
                phase: Phase::Lbfgs,
                loss,
                lambdas: lambdas_of(it.x),
            });
            last_good.copy_from_slice(it.x);
            if k % every == 0 {
                checkpoint(it.x, &format!("{k:07}"));
            }
            Ok(())
        });
        match result {
            Ok(report) => {
                theta = report.x;
                lbfgs_termination = Some(report.termination);
            }
            Err(source) => {
                return Err(TrainError::Aborted {
                    source,
                    checkpoint: checkpoint(&last_good, "abort"),
                });
            }
        }
    }

    let final_loss = match lookup(&recent, &theta) {
        Some(b) => b,
        None => tracked.obj.breakdown(&theta)?,
    };
    let evaluations = tracked.evaluations;
    let (params, mode) = unpacker.unpack(&theta)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        params.save_checkpoint(
            &dir.join("checkpoint-final.json"),
            seed,
            trainable.then(|| mode.lambdas()),
        )?;
    }
    Ok(TrainOutcome {
        theta,
        params,
        mode,
        trace,
        final_loss,
        lbfgs_termination,
        evaluations,
    })
}

/// Writes the trace as CSV: iteration, phase, every loss term, λ₁, λ₂.
pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<(), TrainError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration", "phase", "loss_s", "loss_l", "loss_fs", "loss_fl", "loss_a", "penalty",
        "alpha", "total", "lambda1", "lambda2",
    ])?;
    for r in trace {
        let phase = match r.phase {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        };
        let b = &r.loss;
        let (l1, l2) = r
            .lambdas
            .map_or((String::new(), String::new()), |[a, b]| (format!("{a:e}"), format!("{b:e}")));
        w.write_record([
            r.iteration.to_string(),
            phase.to_string(),
            format!("{:e}", b.loss_s),
            format!("{:e}", b.loss_l),
            format!("{:e}", b.loss_fs),
            format!("{:e}", b.loss_fl),
            format!("{:e}", b.loss_a),
            format!("{:e}", b.penalty),
            format!("{:e}", b.alpha),
            format!("{:e}", b.total),
            l1,
            l2,
        ])?;
    }
    w.flush()?;
    Ok(())
}
