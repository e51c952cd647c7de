use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::datagen::Domain;
use crate::exact_yo::RwParams;
use crate::loss::DEFAULT_N_A;
use crate::network::{Architecture, InputMap};
use crate::optim::{AdamConfig, LbfgsConfig, Schedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    ForwardBright,
    ForwardIntermediate,
    ForwardDark,
    Inverse,
}

impl Kind {
    pub const FORWARD: [Kind; 3] = [Kind::ForwardBright, Kind::ForwardIntermediate, Kind::ForwardDark];

    pub fn name(&self) -> &'static str {
        match self {
            Kind::ForwardBright => "forward-bright",
            Kind::ForwardIntermediate => "forward-intermediate",
            Kind::ForwardDark => "forward-dark",
            Kind::Inverse => "inverse",
        }
    }

    pub fn is_forward(&self) -> bool {
        !matches!(self, Kind::Inverse)
    }

    /// Exact solution the data come from.
    pub fn rw_params(&self) -> RwParams {
        match self {
            Kind::ForwardBright | Kind::Inverse => RwParams::bright(),
            Kind::ForwardIntermediate => RwParams::intermediate(),
            Kind::ForwardDark => RwParams::dark(),
        }
    }

    /// Times at which section profiles are exported.
    pub fn slice_times(&self) -> Vec<f64> {
        match self {
            Kind::ForwardBright => vec![-1.34, -0.67, 0.0, 0.67, 1.34],
            Kind::ForwardIntermediate | Kind::ForwardDark => vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            Kind::Inverse => vec![-0.5, -0.25, 0.0, 0.25, 0.5],
        }
    }

    fn full_domain(&self, nx: usize, nt: usize) -> Domain {
        let t = match self {
            Kind::ForwardBright => 2.0,
            Kind::ForwardIntermediate | Kind::ForwardDark => 3.0,
            Kind::Inverse => 0.5,
        };
        Domain::new((-5.0, 5.0), (-t, t), nx, nt).expect("static domain")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// Box and the exact-solution grid used for data and error evaluation.
    pub domain: Domain,
    pub n_q: usize,
    pub n_f: usize,
    pub alpha: f64,
    #[serde(default)]
    pub noise: f64,
    pub schedule: Schedule,
    /// Hidden-layer widths; input and output widths are fixed at 2 and 3.
    pub hidden: Vec<usize>,
    /// Map `(x, t)` from the domain box onto `[-1, 1]^2` before the first layer.
    #[serde(default = "default_normalize")]
    pub normalize_inputs: bool,
    /// Seeds network initialisation, and the data unless `data_seed` is set.
    pub seed: u64,
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default = "default_n_a")]
    pub n_a: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lbfgs: LbfgsConfig,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_n_a() -> f64 {
    DEFAULT_N_A
}

fn default_normalize() -> bool {
    true
}

fn default_checkpoint_every() -> usize {
    5000
}

impl ExperimentConfig {
    /// Full-size settings: 9×40 network, 20000 Adam + 50000 L-BFGS
    /// iterations, 2000×1000 grid.
    pub fn full(kind: Kind) -> Self {
        let (n_q, n_f) = match kind {
            Kind::ForwardBright => (1000, 20000),
            _ => (2000, 30000),
        };
        Self {
            kind,
            domain: kind.full_domain(2000, 1000),
            n_q,
            n_f,
            alpha: 1e-4,
            noise: 0.0,
            schedule: Schedule {
                adam_iters: 20000,
                lbfgs_iters: 50000,
            },
            hidden: vec![40; 9],
            normalize_inputs: true,
            seed: 1234,
            data_seed: None,
            n_a: DEFAULT_N_A,
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            checkpoint_every: default_checkpoint_every(),
        }
    }

    /// Reduced settings that finish in minutes on one core.
    pub fn desk(kind: Kind) -> Self {
        let full = Self::full(kind);
        if kind.is_forward() {
            Self {
                domain: kind.full_domain(512, 256),
                n_q: 600,
                n_f: 5000,
                schedule: Schedule {
                    adam_iters: 3000,
                    lbfgs_iters: 2000,
                },
                hidden: vec![40; 4],
                ..full
            }
        } else {
            Self {
                domain: kind.full_domain(512, 201),
                n_q: 800,
                n_f: 8000,
                schedule: Schedule {
                    adam_iters: 3000,
                    lbfgs_iters: 3000,
                },
                hidden: vec![20; 4],
                ..full
            }
        }
    }

    pub fn preset(name: &str, kind: Kind) -> Result<Self, ExperimentError> {
        match name {
            "full" => Ok(Self::full(kind)),
            "desk" => Ok(Self::desk(kind)),
            other => Err(ExperimentError::Config(format!("unknown preset {other:?}"))),
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn architecture(&self) -> Result<Architecture, ExperimentError> {
        let mut widths = vec![2];
        widths.extend(&self.hidden);
        widths.push(3);
        let arch = Architecture::new(widths)?;
        if !self.normalize_inputs {
            return Ok(arch);
        }
        let d = &self.domain;
        Ok(arch.with_input_map(InputMap::unit_box((d.x_lo, d.x_hi), (d.t_lo, d.t_hi)))?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule,
            adam: self.adam,
            lbfgs: self.lbfgs,
            checkpoint_every: self.checkpoint_every,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.domain.validate()?;
        self.architecture()?;
        let problems = [
            (self.n_q == 0, "n_q must be positive"),
            (self.n_f == 0, "n_f must be positive"),
            (!(self.alpha >= 0.0), "alpha must be non-negative"),
            (!(self.noise >= 0.0), "noise must be non-negative"),
            (!(self.n_a > 0.0), "n_a must be positive"),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(ExperimentError::Config(msg.to_string())),
            None => Ok(()),
        }
    }

    /// Short label used for output directories.
    pub fn label(&self) -> String {
        format!(
            "{}-a{:e}-n{}-s{}",
            self.kind.name(),
            self.alpha,
            self.noise,
            self.seed
        )
    }
}
