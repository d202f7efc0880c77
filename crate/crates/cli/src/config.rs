use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use isoflow::init::InitialCondition;
use isoflow::pipeline::{OracleSettings, RunSpec};
use isoflow::selection::PerturbationStrategy;
use isoflow::state::GhostCells;
use isoflow::stepper::SolverOptions;
use serde::{Deserialize, Serialize};

/// Input that failed validation.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "ISOFLOW_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default)]
    pub strategy: PerturbationStrategy,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kappa: f64,
    pub gamma: f64,
    pub n_particles: usize,
    pub tau: f64,
    pub t_end: f64,
    #[serde(default = "default_samples")]
    pub samples_per_step: usize,
    #[serde(default)]
    pub n_cells: Option<usize>,
    #[serde(default)]
    pub ghosts: GhostCells,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub initial: InitialCondition,
    #[serde(default)]
    pub solver: SolverOptions<f64>,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub oracle: OracleSettings,
}

fn default_samples() -> usize {
    8
}

fn default_output() -> PathBuf {
    PathBuf::from("isoflow-out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // relative data files are resolved next to the config
        if let InitialCondition::CustomCsv { path: data } = &mut cfg.initial {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        cfg.spec().validate().with_context(|| format!("invalid config {}", path.display()))?;
        if cfg.ensemble.as_ref().is_some_and(|e| e.k == 0) {
            return Err(ConfigError("ensemble.k must be >= 1".into()).into());
        }
        if !(cfg.oracle.cfl > 0.0 && cfg.oracle.cfl < 1.0) {
            return Err(ConfigError(format!("oracle.cfl must lie in (0, 1), got {}", cfg.oracle.cfl)).into());
        }
        if cfg.oracle.refinement == 0 {
            return Err(ConfigError("oracle.refinement must be >= 1".into()).into());
        }
        Ok(cfg)
    }

    pub fn spec(&self) -> RunSpec {
        RunSpec {
            kappa: self.kappa,
            gamma: self.gamma,
            initial: self.initial.clone(),
            n_particles: self.n_particles,
            tau: self.tau,
            t_end: self.t_end,
            samples_per_step: self.samples_per_step,
            n_cells: self.n_cells,
            ghosts: self.ghosts,
            solver: self.solver.clone(),
        }
    }

    pub fn output_dir(&self, overridden: Option<&Path>) -> PathBuf {
        resolve_output(overridden.unwrap_or(&self.output_dir))
    }
}

/// Relative paths land under `$ISOFLOW_OUTPUT_ROOT` when it is set.
pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}
