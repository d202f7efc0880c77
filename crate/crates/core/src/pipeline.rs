//! End-to-end runs: particles, trajectory, diagnostics, invariant checks and
//! the artifact directory layout shared by `run`, `ensemble` and `select`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    coarse_grain, coarse_grain_window, default_cells, defect_ordering, defects, relative_energy, DiagnosticSeries,
};
use crate::error::{domain, Error, Result};
use crate::gas::GasLaw;
use crate::init::InitialCondition;
use crate::metrics::wasserstein_p;
use crate::oracle::{fv_solve, Boundary, GridSolution};
use crate::state::{fmt17, second_moment, GhostCells};
use crate::stepper::SolverOptions;
use crate::trajectory::{content_hash, density_measure, march_with, InterpolantKind, Trajectory};

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub kappa: f64,
    pub gamma: f64,
    pub initial: InitialCondition,
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
    pub solver: SolverOptions<f64>,
}

fn default_samples() -> usize {
    8
}

impl RunSpec {
    pub fn law(&self) -> Result<GasLaw<f64>> {
        GasLaw::new(self.kappa, self.gamma)
    }

    /// Checks every numeric constraint before anything runs.
    pub fn validate(&self) -> Result<()> {
        self.law()?;
        self.initial.validate()?;
        if self.n_particles == 0 {
            return domain("n_particles must be >= 1");
        }
        if self.n_particles < 2 && self.kappa > 0.0 {
            return domain("n_particles must be >= 2 when kappa > 0");
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return domain(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.tau) {
            return domain(format!("t_end must be >= tau, got t_end = {}, tau = {}", self.t_end, self.tau));
        }
        if self.samples_per_step == 0 {
            return domain("samples_per_step must be >= 1");
        }
        if self.n_cells == Some(0) {
            return domain("n_cells must be >= 1");
        }
        let s = &self.solver;
        if !(s.el_tol > 0.0) || s.max_iters == 0 || !(s.degeneracy_eps > 0.0) {
            return domain("solver needs el_tol > 0, max_iters >= 1 and degeneracy_eps > 0");
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n_cells.unwrap_or_else(|| default_cells(self.n_particles))
    }

    pub fn execute(&self) -> Result<RunOutcome> {
        self.validate()?;
        let law = self.law()?;
        let initial = self.initial.particles::<f64>(self.n_particles)?;
        let trajectory = march_with(initial, law, self.tau, self.t_end, self.ghosts, &self.solver)?;
        let series = DiagnosticSeries::compute(&trajectory, self.samples_per_step, self.cells())?;
        let checks = invariant_checks(&trajectory, &series, self.cells())?;
        Ok(RunOutcome { initial_hash: initial_data_hash(&self.initial)?, trajectory, series, checks })
    }
}

/// Hash of the initial data: the particle file for `custom_csv`, the
/// canonical JSON of the parameters otherwise.
pub fn initial_data_hash(ic: &InitialCondition) -> Result<String> {
    match ic {
        InitialCondition::CustomCsv { path } => Ok(content_hash(&fs::read(path)?)),
        other => Ok(content_hash(serde_json::to_string(other)?.as_bytes())),
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory<f64>,
    pub series: DiagnosticSeries,
    pub checks: Vec<InvariantCheck>,
    pub initial_hash: String,
}

impl RunOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// One invariant evaluated on a run. `margin = tolerance - worst`, so a
/// negative margin is a violation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub margin: f64,
}

impl InvariantCheck {
    fn new(name: &str, worst: f64, tolerance: f64) -> Self {
        let margin = tolerance - worst;
        Self { name: name.to_string(), passed: margin >= 0.0 && worst.is_finite(), worst, tolerance, margin }
    }
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::NEG_INFINITY, f64::max)
}

pub fn invariant_checks(traj: &Trajectory<f64>, series: &DiagnosticSeries, n_cells: usize) -> Result<Vec<InvariantCheck>> {
    let law = traj.law();
    let ghosts = traj.ghosts();
    let energies = traj.energies();
    let e0 = energies[0];
    let mut out = Vec::new();

    let rise = max_of(energies.windows(2).map(|w| w[1] - w[0])).max(0.0);
    out.push(InvariantCheck::new("energy_nonincreasing", rise, 1e-8 * e0.abs().max(f64::MIN_POSITIVE)));

    let ledger = max_of(traj.steps().iter().map(|s| -s.dissipation.slack())).max(0.0);
    out.push(InvariantCheck::new("dissipation_ledger", ledger, 1e-8 * (1.0 + e0.abs())));

    let el = max_of(traj.steps().iter().map(|s| s.el_residual)).max(0.0);
    out.push(InvariantCheck::new("euler_lagrange_residual", el, traj.options().el_tol));

    let order = max_of(series.n.iter().zip(&series.e).map(|(n, e)| n - e)).max(0.0);
    out.push(InvariantCheck::new("interpolant_energy_order", order, 1e-8));

    let m_bar = second_moment(traj.initial_state());
    let speed = (2.0 * e0).sqrt();
    let t0 = traj.start_time();
    let moment = max_of(series.times.iter().zip(&series.m2).map(|(t, m)| m - (m_bar + (t - t0) * speed))).max(0.0);
    out.push(InvariantCheck::new("moment_bound", moment, 1e-6));

    let times = &series.times;
    let mut lip = 0.0f64;
    let mut prev = density_measure(&traj.sample(times[0], InterpolantKind::PiecewiseLinear)?.state);
    for w in times.windows(2) {
        let next = density_measure(&traj.sample(w[1], InterpolantKind::PiecewiseLinear)?.state);
        lip = lip.max(wasserstein_p(&prev, &next, 2)? / (w[1] - w[0]) - speed);
        prev = next;
    }
    out.push(InvariantCheck::new("wasserstein_lipschitz", lip.max(0.0), 1e-6));

    let mut negative = 0.0f64;
    let mut ordering = 0.0f64;
    for &t in times {
        let eps = traj.sample(t, InterpolantKind::PiecewiseConstant)?;
        let nu = traj.sample(t, InterpolantKind::PiecewiseLinear)?;
        let field = coarse_grain(&eps, law, ghosts, n_cells)?;
        negative = negative.max(-field.kinetic_gap.iter().chain(&field.pressure_gap).fold(0.0f64, |a, &b| a.min(b)));
        let o = defect_ordering(&eps, &nu, law, ghosts, n_cells)?;
        ordering = ordering.max(o.nu_total - o.eps_total);
    }
    out.push(InvariantCheck::new("defect_nonnegative", negative + 0.0, 1e-10));
    out.push(InvariantCheck::new("defect_ordering", ordering.max(0.0), 1e-8));

    let mass = max_of(traj.states().iter().map(|s| (s.total_mass() - 1.0).abs()));
    out.push(InvariantCheck::new("mass_conservation", mass, 1e-12));
    Ok(out)
}

/// `manifest.json` of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: serde_json::Value,
    pub initial_data_hash: String,
    /// How the member was derived from the base config; these are heuristics.
    #[serde(default)]
    pub perturbation: Option<String>,
    pub files: std::collections::BTreeMap<String, String>,
    pub trajectory_content_hash: String,
    pub invariants: Vec<InvariantCheck>,
    pub all_invariants_passed: bool,
}

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

/// Writes `trajectory/`, `diagnostics.csv` and `manifest.json` into `dir`.
pub fn write_run_dir(
    dir: &Path,
    run_id: &str,
    config: serde_json::Value,
    perturbation: Option<String>,
    outcome: &RunOutcome,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let traj_dir = dir.join("trajectory");
    outcome.trajectory.write_dir(&traj_dir)?;
    let traj_manifest = fs::read(traj_dir.join("manifest.json"))?;
    let mut buf = Vec::new();
    outcome.series.write_csv(&mut buf)?;
    let mut files = std::collections::BTreeMap::new();
    files.insert(DIAGNOSTICS_FILE.to_string(), content_hash(&buf));
    files.insert("trajectory/manifest.json".to_string(), content_hash(&traj_manifest));
    fs::write(dir.join(DIAGNOSTICS_FILE), buf)?;
    let traj_hash: serde_json::Value = serde_json::from_slice(&traj_manifest)?;
    let manifest = RunManifest {
        run_id: run_id.to_string(),
        config,
        initial_data_hash: outcome.initial_hash.clone(),
        perturbation,
        files,
        trajectory_content_hash: traj_hash["content_hash"].as_str().unwrap_or_default().to_string(),
        invariants: outcome.checks.clone(),
        all_invariants_passed: outcome.all_passed(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Wall time goes in its own file so the other artifacts stay byte-identical.
pub fn write_timing(dir: &Path, seconds: f64) -> Result<()> {
    let v = serde_json::json!({ "wall_seconds": seconds });
    fs::write(dir.join(TIMING_FILE), serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}

pub fn read_run_manifest(dir: &Path) -> Result<RunManifest> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    serde_json::from_slice(&bytes).map_err(Error::from)
}

/// Variational and finite-volume solutions compared at one node time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    #[serde(rename = "W2")]
    pub w2: f64,
    pub relative_energy: f64,
}

/// Finite-volume grid settings for [`oracle_compare`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub cfl: f64,
    /// Grid cells per particle.
    pub refinement: usize,
    /// Padding on each side, as a fraction of the initial support.
    pub pad_fraction: f64,
    pub boundary: Boundary,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { cfl: 0.45, refinement: 1, pad_fraction: 0.5, boundary: Boundary::Outflow }
    }
}

/// Runs the particle scheme and the finite-volume oracle from the same data
/// and compares them at every node time. The relative energy is taken over
/// the part of the particle hull where the grid density exceeds `1e-6` of
/// its maximum; the reference density is floored there.
pub fn oracle_compare(spec: &RunSpec, settings: &OracleSettings) -> Result<Vec<ComparisonRow>> {
    spec.validate()?;
    if settings.refinement == 0 || !(settings.pad_fraction >= 0.0) {
        return domain("oracle refinement must be >= 1 and pad_fraction >= 0");
    }
    let law = spec.law()?;
    let initial = spec.initial.particles::<f64>(spec.n_particles)?;
    let traj = march_with(initial, law, spec.tau, spec.t_end, spec.ghosts, &spec.solver)?;
    let fields = spec.initial.fields()?;
    let width = fields.hi - fields.lo;
    let cells_inside = spec.n_particles * settings.refinement;
    let pad_cells = (settings.pad_fraction * cells_inside as f64).round() as usize;
    let pad = pad_cells as f64 * width / cells_inside as f64;
    let mut grid = GridSolution::from_initial(&spec.initial, cells_inside + 2 * pad_cells, pad)?;
    let mut rows = Vec::with_capacity(traj.states().len());
    for (k, state) in traj.states().iter().enumerate() {
        let t = traj.node_time(k);
        if k > 0 {
            grid = fv_solve(&grid, &law, t, settings.cfl, settings.boundary)?;
        }
        let w2 = wasserstein_p(&density_measure(state), &grid.density_measure()?, 2)?;
        let rmax = grid.rho.iter().copied().fold(0.0, f64::max);
        let floor = 1e-6 * rmax;
        let occupied: Vec<usize> = (0..grid.len()).filter(|&j| grid.rho[j] >= floor).collect();
        let (x0, x1) = (state.positions()[0], state.positions()[state.len() - 1]);
        let lo = (grid.cell_centers[occupied[0]] - 0.5 * grid.dx).max(x0);
        let hi = (grid.cell_centers[*occupied.last().expect("mass")] + 0.5 * grid.dx).min(x1);
        let relative = if hi > lo && state.len() >= 2 {
            let field = coarse_grain_window(state, &law, spec.ghosts, lo, hi, spec.cells())?;
            let d = defects(&field, &law)?;
            let reference = |x: f64| {
                let (r, u) = grid.eval(x);
                (r.max(floor), u)
            };
            relative_energy(&field, &d, &law, &reference)?
        } else {
            f64::NAN
        };
        rows.push(ComparisonRow { t, w2, relative_energy: relative });
    }
    Ok(rows)
}

pub fn write_comparison_csv<W: std::io::Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "W2", "relative_energy"])?;
    for r in rows {
        wtr.write_record([fmt17(r.t), fmt17(r.w2), fmt17(r.relative_energy)])?;
    }
    wtr.flush()?;
    Ok(())
}
