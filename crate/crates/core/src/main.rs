use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use yo_pinn::experiment::checks::{selftest, verify_exact, Check};
use yo_pinn::experiment::{
    output_root, run_forward, run_inverse, run_sweep, ExperimentConfig, ExperimentError, Kind, RunRecord,
    RunStatus, OUTPUT_ENV,
};

/// PINN solver for Yajima-Oikawa rogue waves and coefficient discovery.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a rogue-wave solution from initial/boundary data.
    Forward {
        #[arg(long, value_enum, default_value_t = Family::Bright)]
        family: Family,
        #[command(flatten)]
        run: RunArgs,
        /// Fail unless the relative L2 error of S is below this.
        #[arg(long)]
        max_error_s: Option<f64>,
        /// Fail unless the relative L2 error of L is below this.
        #[arg(long)]
        max_error_l: Option<f64>,
    },
    /// Learn the two coefficients from (possibly noisy) data.
    Inverse {
        #[command(flatten)]
        run: RunArgs,
        /// Fail unless RE(lambda1) in percent is below this.
        #[arg(long)]
        max_re1: Option<f64>,
        /// Fail unless RE(lambda2) in percent is below this.
        #[arg(long)]
        max_re2: Option<f64>,
    },
    /// Inverse runs over every (alpha, noise) pair on shared data.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1e-4, 1e-3, 1e-2])]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.02, 0.03])]
        noises: Vec<f64>,
    },
    /// Check the closed-form solutions against the PDE.
    Verify,
    /// Run the fast property checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Bright,
    Intermediate,
    Dark,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Args)]
struct RunArgs {
    /// Starting settings, overridden by `--config` and the flags below.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// TOML or JSON experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    adam_iters: Option<usize>,
    #[arg(long)]
    lbfgs_iters: Option<usize>,
    /// Output directory (default: $YO_PINN_OUT or ./yo-pinn-out).
    #[arg(long, env = OUTPUT_ENV)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self, kind: Kind) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => match self.preset {
                Preset::Desk => ExperimentConfig::desk(kind),
                Preset::Full => ExperimentConfig::full(kind),
            },
        };
        if cfg.kind != kind {
            return Err(ExperimentError::Config(format!(
                "config is for {}, command needs {}",
                cfg.kind.name(),
                kind.name()
            )));
        }
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.data_seed = self.data_seed.or(cfg.data_seed);
        cfg.alpha = self.alpha.unwrap_or(cfg.alpha);
        cfg.noise = self.noise.unwrap_or(cfg.noise);
        cfg.schedule.adam_iters = self.adam_iters.unwrap_or(cfg.schedule.adam_iters);
        cfg.schedule.lbfgs_iters = self.lbfgs_iters.unwrap_or(cfg.schedule.lbfgs_iters);
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(output_root)
    }

    /// Acceptance thresholds apply to the untouched desk presets only.
    fn is_plain_desk(&self) -> bool {
        self.preset == Preset::Desk && self.config.is_none()
    }
}

fn report(checks: &[Check]) -> bool {
    for c in checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn bound(name: &'static str, value: Option<f64>, limit: Option<f64>) -> Option<Check> {
    let limit = limit?;
    let value = value.unwrap_or(f64::NAN);
    Some(Check {
        name,
        passed: value < limit,
        detail: format!("{value:.4e} < {limit:.1e}"),
    })
}

fn summarize(record: &RunRecord, bounds: Vec<Option<Check>>) -> bool {
    println!("{}", serde_json::to_string_pretty(&record.metrics).unwrap_or_default());
    println!("results in {}", record.dir.display());
    let mut checks = vec![Check {
        name: "run completed",
        passed: record.status == RunStatus::Ok,
        detail: record.error.clone().unwrap_or_else(|| "ok".into()),
    }];
    checks.extend(bounds.into_iter().flatten());
    report(&checks)
}

fn run(cli: Cli) -> Result<bool, ExperimentError> {
    match cli.command {
        Command::Forward {
            family,
            run,
            max_error_s,
            max_error_l,
        } => {
            let kind = match family {
                Family::Bright => Kind::ForwardBright,
                Family::Intermediate => Kind::ForwardIntermediate,
                Family::Dark => Kind::ForwardDark,
            };
            let cfg = run.config(kind)?;
            let desk = run.is_plain_desk() && kind == Kind::ForwardBright;
            let record = run_forward(&cfg, &run.out())?;
            let m = record.metrics;
            Ok(summarize(
                &record,
                vec![
                    bound("error S", m.error_s, max_error_s.or(desk.then_some(5e-2))),
                    bound("error L", m.error_l, max_error_l.or(desk.then_some(1e-1))),
                ],
            ))
        }
        Command::Inverse { run, max_re1, max_re2 } => {
            let cfg = run.config(Kind::Inverse)?;
            let desk = run.is_plain_desk() && cfg.noise == 0.0;
            let record = run_inverse(&cfg, &run.out())?;
            let m = record.metrics;
            Ok(summarize(
                &record,
                vec![
                    bound("RE lambda1 (%)", m.re_lambda1, max_re1.or(desk.then_some(5.0))),
                    bound("RE lambda2 (%)", m.re_lambda2, max_re2.or(desk.then_some(10.0))),
                ],
            ))
        }
        Command::Sweep { run, alphas, noises } => {
            let cfg = run.config(Kind::Inverse)?;
            let result = run_sweep(&alphas, &noises, &cfg, &run.out())?;
            println!("table: {}", result.table_path.display());
            let checks: Vec<Check> = result
                .records
                .iter()
                .map(|r| Check {
                    name: "sweep cell",
                    passed: r.status == RunStatus::Ok,
                    detail: format!(
                        "alpha {:e}, noise {}: max RE {:.4}%",
                        r.config.alpha,
                        r.config.noise,
                        r.metrics.max_parameter_error().unwrap_or(f64::NAN)
                    ),
                })
                .collect();
            Ok(report(&checks))
        }
        Command::Verify => Ok(report(&verify_exact())),
        Command::Selftest => Ok(report(&selftest())),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
