//! Experiment orchestration: data preparation, training runs, metrics and
//! result files.

pub mod checks;
pub mod config;
pub mod metrics;

pub use config::{ExperimentConfig, Kind};
pub use metrics::{parameter_relative_error, relative_l2_error, relative_l2_error_complex, MetricError};

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{build_grid, inject_noise, lhs_sample, subsample_ib, DataError, GridDataset, TrainingSet};
use crate::exact_yo::eval_general_rw;
use crate::loss::batch::{predict, PinnObjective};
use crate::loss::{LossBreakdown, LossError};
use crate::network::{init_xavier, NetworkError, NetworkParams};
use crate::optim::{train, write_trace_csv, Termination, TrainError};
use crate::residuals::{PhysicsMode, TRUE_LAMBDA1, TRUE_LAMBDA2};

/// Environment variable naming the root output directory.
pub const OUTPUT_ENV: &str = "YO_PINN_OUT";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Root for run outputs: `$YO_PINN_OUT`, else `./yo-pinn-out`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map_or_else(|| PathBuf::from("yo-pinn-out"), PathBuf::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Reproducible numbers of a run; everything except timing and paths.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// Relative L2 error of `S` with the complex modulus of the difference.
    pub error_s: Option<f64>,
    /// Relative L2 error of `|S|`.
    pub error_abs_s: Option<f64>,
    pub error_l: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub re_lambda1: Option<f64>,
    pub re_lambda2: Option<f64>,
}

impl Metrics {
    /// `max(RE(λ₁), RE(λ₂))` in percent.
    pub fn max_parameter_error(&self) -> Option<f64> {
        Some(self.re_lambda1?.max(self.re_lambda2?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub error: Option<String>,
    pub final_loss: Option<LossBreakdown>,
    pub metrics: Metrics,
    pub lbfgs_termination: Option<Termination>,
    pub iterations: usize,
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub dir: PathBuf,
    pub trace_path: Option<PathBuf>,
    pub field_path: Option<PathBuf>,
    pub slice_paths: Vec<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

fn derive_seed(base: u64, stream: u64) -> u64 {
    base.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Exact grid and the (possibly noisy) training set for a configuration.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(GridDataset, TrainingSet), ExperimentError> {
    cfg.validate()?;
    let grid = build_grid(&cfg.kind.rw_params(), &cfg.domain)?;
    let seed = cfg.data_seed();
    let clean = TrainingSet {
        domain: cfg.domain,
        ib_points: subsample_ib(&grid.initial_boundary(), cfg.n_q, derive_seed(seed, 1))?,
        collocation: lhs_sample(&cfg.domain, cfg.n_f, derive_seed(seed, 2)),
        seed,
        noise_level: 0.0,
    };
    let noisy = inject_noise(&clean, cfg.noise, derive_seed(seed, 3))?;
    Ok((grid, noisy))
}

pub fn run_forward(cfg: &ExperimentConfig, out: &Path) -> Result<RunRecord, ExperimentError> {
    if !cfg.kind.is_forward() {
        return Err(ExperimentError::Config(format!("{} is not a forward run", cfg.kind.name())));
    }
    let (grid, ts) = prepare_data(cfg)?;
    run_with_data(cfg, &grid, &ts, out)
}

pub fn run_inverse(cfg: &ExperimentConfig, out: &Path) -> Result<RunRecord, ExperimentError> {
    if cfg.kind != Kind::Inverse {
        return Err(ExperimentError::Config(format!("{} is not an inverse run", cfg.kind.name())));
    }
    let (grid, ts) = prepare_data(cfg)?;
    run_with_data(cfg, &grid, &ts, out)
}

/// Trains on `ts` and writes every artefact under `out/<label>`. A training
/// abort yields a record with `status = Failed` rather than an error.
pub fn run_with_data(
    cfg: &ExperimentConfig,
    grid: &GridDataset,
    ts: &TrainingSet,
    out: &Path,
) -> Result<RunRecord, ExperimentError> {
    let start = Instant::now();
    let dir = out.join(cfg.label());
    fs::create_dir_all(&dir)?;
    let arch = cfg.architecture()?;
    let params = init_xavier(&arch, cfg.seed);
    let mode = match cfg.kind {
        Kind::Inverse => PhysicsMode::inverse_from_zero(),
        _ => PhysicsMode::forward_yo(),
    };
    let mut obj = PinnObjective::new(&arch, params.scale(), mode, ts, cfg.alpha, cfg.n_a)?;
    let theta = obj.pack(&params);
    let mut train_cfg = cfg.train_config();
    train_cfg.checkpoint_dir = Some(dir.join("checkpoints"));

    let mut record = RunRecord {
        config: cfg.clone(),
        status: RunStatus::Ok,
        error: None,
        final_loss: None,
        metrics: Metrics::default(),
        lbfgs_termination: None,
        iterations: 0,
        evaluations: 0,
        wall_time_s: 0.0,
        dir: dir.clone(),
        trace_path: None,
        field_path: None,
        slice_paths: Vec::new(),
        checkpoint_path: None,
    };
    match train(&mut obj, theta, &train_cfg, Some(cfg.seed)) {
        Ok(outcome) => {
            let trace_path = dir.join("trace.csv");
            write_trace_csv(&trace_path, &outcome.trace)?;
            record.trace_path = Some(trace_path);
            record.final_loss = Some(outcome.final_loss);
            record.lbfgs_termination = outcome.lbfgs_termination;
            record.iterations = outcome.trace.len();
            record.evaluations = outcome.evaluations;
            record.checkpoint_path = Some(dir.join("checkpoints").join("checkpoint-final.json"));
            record.metrics = evaluate(&outcome.params, outcome.mode, grid)?;
            record.field_path = Some(write_field(&dir, &outcome.params, grid)?);
            record.slice_paths = write_slices(&dir, &outcome.params, cfg)?;
        }
        Err(TrainError::Aborted { source, checkpoint }) => {
            record.status = RunStatus::Failed;
            record.error = Some(source.to_string());
            record.checkpoint_path = checkpoint;
        }
        Err(e) => return Err(e.into()),
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    fs::write(dir.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

/// Errors against the exact grid, plus coefficient errors in inverse mode.
pub fn evaluate(
    params: &NetworkParams,
    mode: PhysicsMode,
    grid: &GridDataset,
) -> Result<Metrics, ExperimentError> {
    let pred = predict(params, &grid.coordinates())?;
    let pu: Vec<f64> = pred.iter().map(|p| p[0]).collect();
    let pv: Vec<f64> = pred.iter().map(|p| p[1]).collect();
    let pl: Vec<f64> = pred.iter().map(|p| p[2]).collect();
    let abs_pred: Vec<f64> = pu.iter().zip(&pv).map(|(u, v)| u.hypot(*v)).collect();
    let abs_exact: Vec<f64> = grid.u.iter().zip(&grid.v).map(|(u, v)| u.hypot(*v)).collect();
    let mut m = Metrics {
        error_s: Some(relative_l2_error_complex((&pu, &pv), (&grid.u, &grid.v))?),
        error_abs_s: Some(relative_l2_error(&abs_pred, &abs_exact)?),
        error_l: Some(relative_l2_error(&pl, &grid.l)?),
        ..Metrics::default()
    };
    if mode.is_trainable() {
        let [l1, l2] = mode.lambdas();
        m.lambda1 = Some(l1);
        m.lambda2 = Some(l2);
        m.re_lambda1 = Some(parameter_relative_error(l1, TRUE_LAMBDA1)?);
        m.re_lambda2 = Some(parameter_relative_error(l2, TRUE_LAMBDA2)?);
    }
    Ok(m)
}

/// Grid stride keeping at most `cap` nodes per axis.
fn stride(n: usize, cap: usize) -> usize {
    n.div_ceil(cap).max(1)
}

/// Coarse CSV of exact and predicted fields.
fn write_field(dir: &Path, params: &NetworkParams, grid: &GridDataset) -> Result<PathBuf, ExperimentError> {
    let (sx, st) = (stride(grid.xs.len(), 256), stride(grid.ts.len(), 256));
    let nodes: Vec<(usize, usize)> = (0..grid.ts.len())
        .step_by(st)
        .flat_map(|it| (0..grid.xs.len()).step_by(sx).map(move |ix| (ix, it)))
        .collect();
    let coords: Vec<[f64; 2]> = nodes.iter().map(|&(ix, it)| [grid.xs[ix], grid.ts[it]]).collect();
    let pred = predict(params, &coords)?;
    let path = dir.join("field.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x", "t", "u", "v", "l", "u_pred", "v_pred", "l_pred", "abs_s", "abs_s_pred"])?;
    for (&(ix, it), p) in nodes.iter().zip(&pred) {
        let e = grid.point(ix, it);
        let row = [e.x, e.t, e.u, e.v, e.l, p[0], p[1], p[2], e.u.hypot(e.v), p[0].hypot(p[1])];
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(path)
}

/// Whitespace-separated section profiles at the configured times.
fn write_slices(dir: &Path, params: &NetworkParams, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, ExperimentError> {
    let rw = cfg.kind.rw_params();
    let xs = cfg.domain.xs();
    let mut paths = Vec::new();
    for t in cfg.kind.slice_times() {
        if !(cfg.domain.t_lo..=cfg.domain.t_hi).contains(&t) {
            continue;
        }
        let coords: Vec<[f64; 2]> = xs.iter().map(|&x| [x, t]).collect();
        let pred = predict(params, &coords)?;
        let path = dir.join(format!("slice_t{t:+.2}.dat"));
        let mut f = io::BufWriter::new(fs::File::create(&path)?);
        writeln!(f, "# x abs_s abs_s_pred l l_pred  (t = {t})")?;
        for (&x, p) in xs.iter().zip(&pred) {
            let e = eval_general_rw(&rw, x, t);
            writeln!(f, "{x:e} {:e} {:e} {:e} {:e}", e.modulus(), p[0].hypot(p[1]), e.l, p[2])?;
        }
        f.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub table_path: PathBuf,
}

/// Every `(noise, alpha)` cell on shared data: for a fixed noise level the
/// training set is generated once and reused across alphas. Failed cells are
/// recorded and the sweep continues.
pub fn run_sweep(
    alphas: &[f64],
    noises: &[f64],
    base: &ExperimentConfig,
    out: &Path,
) -> Result<SweepResult, ExperimentError> {
    if alphas.is_empty() || noises.is_empty() {
        return Err(ExperimentError::Config("sweep needs at least one alpha and one noise level".into()));
    }
    fs::create_dir_all(out)?;
    let mut records = Vec::new();
    for &noise in noises {
        let data_cfg = ExperimentConfig {
            noise,
            data_seed: Some(base.data_seed()),
            ..base.clone()
        };
        let (grid, ts) = prepare_data(&data_cfg)?;
        for &alpha in alphas {
            let cfg = ExperimentConfig {
                alpha,
                ..data_cfg.clone()
            };
            let record = match run_with_data(&cfg, &grid, &ts, out) {
                Ok(r) => r,
                Err(e) => failed_record(&cfg, out, e.to_string()),
            };
            records.push(record);
        }
    }
    let table_path = out.join("sweep.csv");
    write_sweep_table(&table_path, &records)?;
    Ok(SweepResult { records, table_path })
}

fn failed_record(cfg: &ExperimentConfig, out: &Path, error: String) -> RunRecord {
    RunRecord {
        config: cfg.clone(),
        status: RunStatus::Failed,
        error: Some(error),
        final_loss: None,
        metrics: Metrics::default(),
        lbfgs_termination: None,
        iterations: 0,
        evaluations: 0,
        wall_time_s: 0.0,
        dir: out.join(cfg.label()),
        trace_path: None,
        field_path: None,
        slice_paths: Vec::new(),
        checkpoint_path: None,
    }
}

/// One row per `(noise, alpha)` cell: learned coefficients and their errors.
pub fn write_sweep_table(path: &Path, records: &[RunRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["noise", "alpha", "lambda1", "re_lambda1_pct", "lambda2", "re_lambda2_pct", "status"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
    for r in records {
        let m = &r.metrics;
        w.write_record([
            format!("{}", r.config.noise),
            format!("{:e}", r.config.alpha),
            opt(m.lambda1),
            opt(m.re_lambda1),
            opt(m.lambda2),
            opt(m.re_lambda2),
            match r.status {
                RunStatus::Ok => "ok".into(),
                RunStatus::Failed => "failed".into(),
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}
