//! Run configuration, read from a TOML file.
//!
//! ```toml
//! mode = "train"            # train | evaluate | exploitability | oracle-compare | sweep-m
//! seed = 42
//! out = "runs/g1"           # optional; --out and GFBSDE_OUT take precedence
//! plots = true
//!
//! [model]
//! kind = "constant_bs"      # or "markovian_bs"
//! sigma = 0.1
//! theta = 1.0               # constant_bs only
//! eta = { kind = "constant", value = 3.0 }
//! rho = 1.0
//! T = 1.0
//! n_star = 40
//!
//! [graphon]
//! kind = "two_block"
//! a = 2.0
//! b = 0.5
//!
//! [train]
//! iterations = 10000
//! batch_size = 512
//! [train.network]
//! hidden_widths = [64, 64, 64]
//! ```

use std::path::{Path, PathBuf};

use graphon_fbsde::exploitability::ExploitabilityConfig;
use graphon_fbsde::train::TrainConfig;
use graphon_fbsde::{GraphonKernel, MarketModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const OUT_ENV: &str = "GFBSDE_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Evaluate,
    Exploitability,
    OracleCompare,
    #[serde(alias = "sweep-M")]
    SweepM,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Evaluate => "evaluate",
            Mode::Exploitability => "exploitability",
            Mode::OracleCompare => "oracle-compare",
            Mode::SweepM => "sweep-m",
        }
    }
}

fn default_eval_batch() -> usize {
    4096
}
fn default_eval_seed() -> u64 {
    7
}
fn default_trajectory_particles() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Checkpoint to load; defaults to `<out>/checkpoint.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
    /// Particles written to the trajectory CSV.
    #[serde(default = "default_trajectory_particles")]
    pub trajectory_particles: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            batch_size: default_eval_batch(),
            seed: default_eval_seed(),
            trajectory_particles: default_trajectory_particles(),
        }
    }
}

fn default_sweep_sizes() -> Vec<usize> {
    vec![128, 256, 512, 1024, 2048, 4096]
}
fn default_sweep_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_sizes")]
    pub batch_sizes: Vec<usize>,
    /// Added to the run seed for each repetition.
    #[serde(default = "default_sweep_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            batch_sizes: default_sweep_sizes(),
            seeds: default_sweep_seeds(),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Master seed; overrides `train.seed`.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "yes")]
    pub plots: bool,
    pub model: MarketModel,
    pub graphon: GraphonKernel,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub exploitability: ExploitabilityConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            CliError::ConfigField { path, message }
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Checks every block the mode uses.
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.graphon.validate()?;
        match self.mode {
            Mode::Train | Mode::SweepM => self.train.validate()?,
            Mode::Exploitability => {
                self.train.validate()?;
                self.exploitability.best_response.validate()?;
                if self.exploitability.eval_size < 2 || self.exploitability.paths == 0 {
                    return Err(CliError::Config(
                        "exploitability needs eval_size >= 2 and paths >= 1".into(),
                    ));
                }
            }
            Mode::Evaluate | Mode::OracleCompare => {
                if self.evaluate.batch_size < 2 {
                    return Err(CliError::Config("evaluate.batch_size must be at least 2".into()));
                }
            }
        }
        if self.mode == Mode::SweepM && (self.sweep.batch_sizes.is_empty() || self.sweep.seeds.is_empty()) {
            return Err(CliError::Config("sweep needs at least one batch size and one seed".into()));
        }
        if self.mode == Mode::OracleCompare {
            graphon_fbsde::oracle::ClosedFormParams::from_model(&self.model, self.graphon)?;
        }
        Ok(())
    }

    /// Training settings with the master seed applied.
    pub fn seeded_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// `--out`, then the environment override, then the file, then `./out`.
    pub fn resolve_out(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
