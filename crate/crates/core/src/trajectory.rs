//! Time marching and the interpolants between step nodes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::gas::GasLaw;
use crate::metrics::AtomicMeasure;
use crate::scalar::Scalar;
use crate::state::{fmt17, total_energy_with, GhostCells, ParticleState};
use crate::stepper::{solve_step, SolverOptions, StepProblem, StepSolution};

/// Which interpolant a sample comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolantKind {
    PiecewiseConstant,
    PiecewiseLinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolantSample<T> {
    pub time: T,
    pub kind: InterpolantKind,
    pub state: ParticleState<T>,
}

/// States at the nodes `t_0 + kτ` and the step solutions between them.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    tau: T,
    t_end: T,
    law: GasLaw<T>,
    ghosts: GhostCells,
    options: SolverOptions<T>,
    states: Vec<ParticleState<T>>,
    steps: Vec<StepSolution<T>>,
}

/// Number of steps so that `K τ` reaches `t_end`, ignoring round-off in the ratio.
pub fn step_count<T: Scalar>(tau: T, t_end: T) -> usize {
    let ratio = (t_end / tau).f64();
    let k = (ratio * (1.0 - 1e-12)).ceil();
    (k.max(1.0)) as usize
}

/// Runs `⌈t_end/τ⌉` steps from `initial`.
pub fn march<T: Scalar>(
    initial: ParticleState<T>,
    law: GasLaw<T>,
    tau: T,
    t_end: T,
    opts: &SolverOptions<T>,
) -> Result<Trajectory<T>> {
    march_with(initial, law, tau, t_end, GhostCells::Enabled, opts)
}

pub fn march_with<T: Scalar>(
    initial: ParticleState<T>,
    law: GasLaw<T>,
    tau: T,
    t_end: T,
    ghosts: GhostCells,
    opts: &SolverOptions<T>,
) -> Result<Trajectory<T>> {
    if !(tau > T::zero()) || !(t_end >= tau) || !t_end.is_finite() {
        return domain(format!("need 0 < tau <= t_end, got tau = {tau}, t_end = {t_end}"));
    }
    let k_total = step_count(tau, t_end);
    let t0 = initial.time();
    let mut states = Vec::with_capacity(k_total + 1);
    let mut steps = Vec::with_capacity(k_total);
    states.push(initial);
    let ledger_tol = T::tol(1e-8);
    for k in 0..k_total {
        let current = states.last().expect("nonempty").clone();
        let wrap = |e: Error| Error::Step { index: k, source: Box::new(e) };
        let problem = StepProblem::new(current, law, tau).map_err(wrap)?.with_ghosts(ghosts);
        let sol = solve_step(&problem, opts).map_err(wrap)?;
        let d = sol.dissipation;
        if !d.holds(ledger_tol) {
            return Err(wrap(Error::Consistency(format!(
                "energy inequality violated: before {:e}, after {:e}, dissipation {:e}",
                d.energy_before.f64(),
                d.energy_after.f64(),
                d.dissipation().f64()
            ))));
        }
        log::debug!(
            "step {k}: iterations {}, E {:e} -> {:e}, residual {:e}",
            sol.iterations,
            d.energy_before.f64(),
            d.energy_after.f64(),
            sol.el_residual.f64()
        );
        let time = t0 + tau * T::from_usize_c(k + 1);
        let next = sol.next_state(&problem, opts.degeneracy_eps).map_err(wrap)?.with_time(time);
        states.push(next);
        steps.push(sol);
    }
    Ok(Trajectory { tau, t_end, law, ghosts, options: opts.clone(), states, steps })
}

impl<T: Scalar> Trajectory<T> {
    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn law(&self) -> &GasLaw<T> {
        &self.law
    }

    pub fn ghosts(&self) -> GhostCells {
        self.ghosts
    }

    pub fn options(&self) -> &SolverOptions<T> {
        &self.options
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Node states `k = 0..=K`.
    pub fn states(&self) -> &[ParticleState<T>] {
        &self.states
    }

    pub fn steps(&self) -> &[StepSolution<T>] {
        &self.steps
    }

    pub fn initial_state(&self) -> &ParticleState<T> {
        &self.states[0]
    }

    pub fn final_state(&self) -> &ParticleState<T> {
        self.states.last().expect("trajectory has states")
    }

    pub fn start_time(&self) -> T {
        self.states[0].time()
    }

    /// Time of the last node, `t_0 + Kτ >= t_end`.
    pub fn final_time(&self) -> T {
        self.final_state().time()
    }

    pub fn node_time(&self, k: usize) -> T {
        self.states[k].time()
    }

    /// Total energies at the nodes.
    pub fn energies(&self) -> Vec<T> {
        self.states.iter().map(|s| total_energy_with(s, &self.law, self.ghosts).total).collect()
    }

    /// Step index containing `time` and the fraction `s ∈ [0, 1]` within it.
    /// Times within round-off of a node snap to it.
    pub fn locate(&self, time: T) -> Result<(usize, T)> {
        let (t0, t1) = (self.start_time(), self.final_time());
        let slack = T::tol(1e-12) * (T::one() + t1.abs());
        if !time.is_finite() || time < t0 - slack || time > t1 + slack {
            return domain(format!("time {time} outside [{t0}, {t1}]"));
        }
        let x = ((time - t0) / self.tau).max(T::zero());
        let nearest = x.round();
        let x = if (x - nearest).abs() <= T::tol(1e-10) { nearest } else { x };
        let k = x.floor().to_usize().unwrap_or(0).min(self.n_steps());
        if k == self.n_steps() {
            return Ok((k - 1, T::one()));
        }
        Ok((k, (x - T::from_usize_c(k)).max(T::zero()).min(T::one())))
    }

    /// Evaluates an interpolant at `time`.
    pub fn sample(&self, time: T, kind: InterpolantKind) -> Result<InterpolantSample<T>> {
        let (k, s) = self.locate(time)?;
        let state = match kind {
            InterpolantKind::PiecewiseConstant => {
                let node = if s >= T::one() { k + 1 } else { k };
                self.states[node].clone()
            }
            InterpolantKind::PiecewiseLinear => {
                if s == T::zero() {
                    self.states[k].clone()
                } else if s == T::one() {
                    self.states[k + 1].clone()
                } else {
                    self.linear_state(k, s, time)?
                }
            }
        };
        Ok(InterpolantSample { time, kind, state })
    }

    fn linear_state(&self, k: usize, s: T, time: T) -> Result<ParticleState<T>> {
        let base = &self.states[k];
        let step = &self.steps[k];
        let r = T::one() - s;
        let x: Vec<T> = base.positions().iter().zip(&step.positions).map(|(&a, &b)| r * a + s * b).collect();
        let w: Vec<T> = base.velocities().iter().zip(&step.w).map(|(&a, &b)| r * a + s * b).collect();
        Ok(base.advanced(x, w, time, self.options.degeneracy_eps)?.with_time(time))
    }

    /// `samples_per_step` uniform times in every step plus the final node.
    pub fn sample_times(&self, samples_per_step: usize) -> Vec<T> {
        let per = samples_per_step.max(1);
        let t0 = self.start_time();
        let mut out = Vec::with_capacity(self.n_steps() * per + 1);
        for k in 0..self.n_steps() {
            for j in 0..per {
                let frac = T::from_usize_c(k) + T::from_usize_c(j) / T::from_usize_c(per);
                out.push(t0 + self.tau * frac);
            }
        }
        out.push(self.final_time());
        out
    }

    /// Writes `states/`, `ledger.csv` and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let states_dir = dir.join("states");
        fs::create_dir_all(&states_dir)?;
        let mut hashes = BTreeMap::new();
        for (k, s) in self.states.iter().enumerate() {
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            let name = format!("states/step_{k:06}.csv");
            hashes.insert(name.clone(), content_hash(&buf));
            fs::write(dir.join(&name), buf)?;
        }
        let ledger = self.ledger_csv()?;
        hashes.insert("ledger.csv".to_string(), content_hash(&ledger));
        fs::write(dir.join("ledger.csv"), ledger)?;

        let mut digest = Sha256::new();
        for (name, h) in &hashes {
            digest.update(format!("{h} {name}\n").as_bytes());
        }
        let manifest = Manifest {
            tau: self.tau.f64(),
            t_start: self.start_time().f64(),
            t_end: self.t_end.f64(),
            n_steps: self.n_steps(),
            n_particles: self.states[0].len(),
            mass_scale: self.states[0].mass_scale().f64(),
            kappa: self.law.kappa.f64(),
            gamma: self.law.gamma.f64(),
            ghost_cells: self.ghosts,
            options: ManifestOptions {
                el_tol: self.options.el_tol.f64(),
                max_iters: self.options.max_iters,
                degeneracy_eps: self.options.degeneracy_eps.f64(),
                test_levels: self.options.test_levels,
            },
            files: hashes,
            content_hash: hex::encode(digest.finalize()),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    fn ledger_csv(&self) -> Result<Vec<u8>> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["k", "t", "E_before", "E_after", "velocity_term", "bregman_term", "multiplier_term"])?;
        for (k, step) in self.steps.iter().enumerate() {
            let d = &step.dissipation;
            wtr.write_record([
                k.to_string(),
                fmt17(self.node_time(k)),
                fmt17(d.energy_before),
                fmt17(d.energy_after),
                fmt17(d.velocity_term),
                fmt17(d.bregman_term),
                fmt17(d.multiplier_term),
            ])?;
        }
        wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Git-style object hash: SHA-256 of `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tau: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
    pub n_particles: usize,
    pub mass_scale: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub ghost_cells: GhostCells,
    pub options: ManifestOptions,
    pub files: BTreeMap<String, String>,
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestOptions {
    pub el_tol: f64,
    pub max_iters: usize,
    pub degeneracy_eps: f64,
    pub test_levels: usize,
}

/// `Σ m_i δ_{x_i}`.
pub fn density_measure<T: Scalar>(state: &ParticleState<T>) -> AtomicMeasure<T> {
    AtomicMeasure::new(state.positions().to_vec(), state.masses().to_vec())
        .expect("particle positions are strictly increasing")
}

/// `Σ m_i v_i δ_{x_i}`.
pub fn momentum_measure<T: Scalar>(state: &ParticleState<T>) -> AtomicMeasure<T> {
    let w = state.masses().iter().zip(state.velocities()).map(|(&m, &v)| m * v).collect();
    AtomicMeasure::new(state.positions().to_vec(), w).expect("particle positions are strictly increasing")
}
