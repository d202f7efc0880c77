mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use isoflow::metrics::{bl_norm, wasserstein_p, AtomicMeasure};
use isoflow::pipeline::{
    oracle_compare, read_run_manifest, write_comparison_csv, write_run_dir, write_timing, DIAGNOSTICS_FILE,
};
use isoflow::selection::{run_members, select, Ensemble, EnsembleMember, Objective, PerturbationStrategy};
use isoflow::{diagnostics::DiagnosticSeries, Error};
use serde::{Deserialize, Serialize};

use config::{resolve_output, ConfigError, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(name = "isoflow", version, about = "Variational particle solver for 1D isentropic gas dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write trajectory, diagnostics and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run perturbed copies of a config from the same initial data.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides `ensemble.k`.
        #[arg(long)]
        k: Option<usize>,
        /// Overrides `ensemble.strategy`.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
    },
    /// Minimal elements and chains of an ensemble directory.
    Select {
        #[arg(long)]
        ensemble_dir: PathBuf,
        #[arg(long, default_value = "acceleration")]
        objective: String,
        /// Defaults to 1e-9 (1 + largest profile value).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Distance between two measures stored as `x,w` CSV files.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "w2")]
        metric: MetricArg,
    },
    /// Compare the particle solution with the finite-volume oracle.
    OracleCompare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    TauSweep,
    ParticleSweep,
    SeedSweep,
    ResolutionSweep,
    Identical,
}

impl From<StrategyArg> for PerturbationStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::TauSweep => PerturbationStrategy::TauSweep,
            StrategyArg::ParticleSweep => PerturbationStrategy::ParticleSweep,
            StrategyArg::SeedSweep => PerturbationStrategy::SeedSweep,
            StrategyArg::ResolutionSweep => PerturbationStrategy::ResolutionSweep,
            StrategyArg::Identical => PerturbationStrategy::Identical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MetricArg {
    W1,
    W2,
    Bl,
}

#[derive(Debug)]
struct InvariantViolation(Vec<String>);

impl std::fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invariant checks failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for InvariantViolation {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<InvariantViolation>().is_some() {
        return EXIT_INVARIANT;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return classify(e);
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() || cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
    }
    1
}

fn classify(e: &Error) -> u8 {
    match e {
        Error::Domain(_) => EXIT_CONFIG,
        Error::Step { source, .. } => classify(source),
        Error::Solver { .. } | Error::Degenerate { .. } | Error::PartialEnsemble { .. } => EXIT_SOLVER,
        Error::Consistency(_) => EXIT_INVARIANT,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, output } => run(&config, output.as_deref()),
        Command::Ensemble { config, output, k, strategy } => ensemble(&config, output.as_deref(), k, strategy),
        Command::Select { ensemble_dir, objective, tol } => {
            let objective: Objective = objective.parse()?;
            let report = select_dir(&resolve_output(&ensemble_dir), objective, tol)?;
            println!("{report}");
            Ok(())
        }
        Command::Metrics { a, b, metric } => metrics(&a, &b, metric),
        Command::OracleCompare { config, output } => compare(&config, output.as_deref()),
    }
}

fn run(config: &Path, output: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = cfg.output_dir(output);
    let start = Instant::now();
    let outcome = cfg.spec().execute()?;
    let manifest = write_run_dir(&dir, "run", serde_json::to_value(&cfg)?, None, &outcome)
        .with_context(|| format!("cannot write {}", dir.display()))?;
    write_timing(&dir, start.elapsed().as_secs_f64())?;
    log::info!("wrote {}", dir.display());
    let failed: Vec<String> = manifest.invariants.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    if !failed.is_empty() {
        return Err(InvariantViolation(failed).into());
    }
    println!("{}", dir.display());
    Ok(())
}

/// `ensemble.json` at the root of an ensemble directory.
#[derive(Serialize, Deserialize)]
struct EnsembleIndex {
    strategy: PerturbationStrategy,
    k: usize,
    seed: u64,
    members: Vec<String>,
    base_config: serde_json::Value,
}

fn ensemble(config: &Path, output: Option<&Path>, k: Option<usize>, strategy: Option<StrategyArg>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = cfg.output_dir(output);
    let k = k.or(cfg.ensemble.as_ref().map(|e| e.k)).unwrap_or(4);
    let strategy = strategy.map(PerturbationStrategy::from).or(cfg.ensemble.as_ref().map(|e| e.strategy)).unwrap_or_default();
    if k == 0 {
        return Err(ConfigError("k must be >= 1".into()).into());
    }
    let start = Instant::now();
    let members = run_members(&cfg.spec(), strategy, k, cfg.seed)?;
    fs::create_dir_all(&dir)?;
    let mut failed = Vec::new();
    let mut ids = Vec::new();
    for (id, spec, label, outcome) in &members {
        let m = write_run_dir(&dir.join(id), id, serde_json::to_value(spec)?, Some(label.clone()), outcome)?;
        failed.extend(m.invariants.iter().filter(|c| !c.passed).map(|c| format!("{id}/{}", c.name)));
        ids.push(id.clone());
    }
    let index = EnsembleIndex { strategy, k, seed: cfg.seed, members: ids, base_config: serde_json::to_value(&cfg)? };
    fs::write(dir.join("ensemble.json"), serde_json::to_string_pretty(&index)? + "\n")?;
    write_timing(&dir, start.elapsed().as_secs_f64())?;
    if !failed.is_empty() {
        return Err(InvariantViolation(failed).into());
    }
    println!("{}", dir.display());
    Ok(())
}

fn load_ensemble(dir: &Path) -> Result<Ensemble> {
    let index: EnsembleIndex = serde_json::from_slice(
        &fs::read(dir.join("ensemble.json")).with_context(|| format!("{} is not an ensemble directory", dir.display()))?,
    )?;
    let mut members = Vec::with_capacity(index.members.len());
    for id in &index.members {
        let member_dir = dir.join(id);
        let manifest = read_run_manifest(&member_dir)?;
        let series = DiagnosticSeries::read_path(&member_dir.join(DIAGNOSTICS_FILE))?;
        members.push(EnsembleMember {
            run_id: manifest.run_id,
            initial_data_hash: manifest.initial_data_hash,
            perturbation: manifest.perturbation,
            series,
        });
    }
    Ok(Ensemble::new(members)?)
}

fn select_dir(dir: &Path, objective: Objective, tol: Option<f64>) -> Result<String> {
    let ens = load_ensemble(dir)?;
    let report = select(&ens, objective, tol)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(dir.join("selection.json"), &text)?;
    Ok(text)
}

fn metrics(a: &Path, b: &Path, metric: MetricArg) -> Result<()> {
    let read = |p: &Path| -> Result<AtomicMeasure<f64>> {
        let f = fs::File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
        AtomicMeasure::read_csv(f).map_err(|e| ConfigError(format!("cannot parse measure {}: {e}", p.display())).into())
    };
    let (mu, nu) = (read(a)?, read(b)?);
    let value = match metric {
        MetricArg::W1 => wasserstein_p(&mu, &nu, 1)?,
        MetricArg::W2 => wasserstein_p(&mu, &nu, 2)?,
        MetricArg::Bl => bl_norm(&mu.difference(&nu)).0,
    };
    println!("{}", serde_json::json!({ "metric": metric, "value": value }));
    Ok(())
}

fn compare(config: &Path, output: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = cfg.output_dir(output);
    let rows = oracle_compare(&cfg.spec(), &cfg.oracle)?;
    fs::create_dir_all(&dir)?;
    let mut buf = Vec::new();
    write_comparison_csv(&rows, &mut buf)?;
    fs::write(dir.join("comparison.csv"), buf)?;
    println!("{}", dir.join("comparison.csv").display());
    Ok(())
}
