//! Pointwise quasi-order on time profiles and minimal elements of finite
//! ensembles of runs from the same initial data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticSeries;
use crate::error::{domain, Error, Result};
use crate::pipeline::{RunOutcome, RunSpec};
use crate::stepper::StartPoint;

/// Objective sampled on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelerationProfile {
    pub run_id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl AccelerationProfile {
    pub fn new(run_id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return domain("a profile needs as many values as grid points, and at least one");
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return domain("profile grid must be strictly increasing");
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("profile values must be finite and >= 0");
        }
        Ok(Self { run_id: run_id.into(), times, values })
    }

    /// Piecewise-linear interpolation onto `grid`, held constant outside
    /// the profile's own grid.
    pub fn resampled(&self, grid: &[f64]) -> Result<Self> {
        let values = grid.iter().map(|&t| interpolate(&self.times, &self.values, t)).collect();
        Self::new(self.run_id.clone(), grid.to_vec(), values)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.run_id.clone(), self.times.clone(), self.values.iter().map(|v| v * c).collect())
    }

    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
            .sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let k = ts.partition_point(|&s| s <= t);
    if k == 0 {
        return vs[0];
    }
    if k == ts.len() {
        return vs[ts.len() - 1];
    }
    let (t0, t1) = (ts[k - 1], ts[k]);
    let s = (t - t0) / (t1 - t0);
    (1.0 - s) * vs[k - 1] + s * vs[k]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    LessEq,
    GreaterEq,
    Equivalent,
    Incomparable,
}

impl Relation {
    pub fn comparable(self) -> bool {
        self != Relation::Incomparable
    }
}

fn check_grids(p: &AccelerationProfile, q: &AccelerationProfile) -> Result<()> {
    if p.times != q.times {
        return domain(format!("profiles {} and {} live on different grids", p.run_id, q.run_id));
    }
    Ok(())
}

/// `p ≼ q` iff `p ≤ q + tol` at every grid point.
pub fn compare(p: &AccelerationProfile, q: &AccelerationProfile, tol: f64) -> Result<Relation> {
    check_grids(p, q)?;
    let le = p.values.iter().zip(&q.values).all(|(a, b)| *a <= b + tol);
    let ge = p.values.iter().zip(&q.values).all(|(a, b)| *b <= a + tol);
    Ok(match (le, ge) {
        (true, true) => Relation::Equivalent,
        (true, false) => Relation::LessEq,
        (false, true) => Relation::GreaterEq,
        (false, false) => Relation::Incomparable,
    })
}

/// `q` is below `m` everywhere up to `tol` and below by more than `tol`
/// somewhere.
pub fn strictly_dominates(q: &AccelerationProfile, m: &AccelerationProfile, tol: f64) -> Result<bool> {
    check_grids(q, m)?;
    let below = q.values.iter().zip(&m.values).all(|(a, b)| *a <= b + tol);
    let strict = q.values.iter().zip(&m.values).any(|(a, b)| *a < b - tol);
    Ok(below && strict)
}

/// Default comparison tolerance `1e-9 (1 + max value)`.
pub fn default_tolerance(profiles: &[AccelerationProfile]) -> f64 {
    1e-9 * (1.0 + profiles.iter().map(AccelerationProfile::max_value).fold(0.0, f64::max))
}

/// Indices of the profiles not strictly dominated by any other, in input
/// order. Tolerance-based domination is not transitive, so if it leaves no
/// survivor the exact Pareto front is returned instead.
pub fn minimal_indices(profiles: &[AccelerationProfile], tol: f64) -> Result<Vec<usize>> {
    if profiles.is_empty() {
        return domain("minimal elements of an empty ensemble are undefined");
    }
    let front = |tol: f64| -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (i, m) in profiles.iter().enumerate() {
            let mut dominated = false;
            for (j, q) in profiles.iter().enumerate() {
                if i != j && strictly_dominates(q, m, tol)? {
                    dominated = true;
                    break;
                }
            }
            if !dominated {
                out.push(i);
            }
        }
        Ok(out)
    };
    let out = front(tol)?;
    if out.is_empty() {
        log::warn!("tolerance domination left no minimal element; using exact domination");
        return front(0.0);
    }
    Ok(out)
}

fn by_run_id(profiles: &[AccelerationProfile]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| profiles[a].run_id.cmp(&profiles[b].run_id));
    order
}

/// Greedy maximal chain seeded at `start`: members are visited by run_id
/// and kept when comparable with everything kept so far. Returned from the
/// bottom of the chain up.
pub fn chain_from(profiles: &[AccelerationProfile], start: usize, tol: f64) -> Result<Vec<usize>> {
    let mut chain = vec![start];
    for i in by_run_id(profiles) {
        if i == start {
            continue;
        }
        let mut ok = true;
        for &c in &chain {
            if !compare(&profiles[i], &profiles[c], tol)?.comparable() {
                ok = false;
                break;
            }
        }
        if ok {
            chain.push(i);
        }
    }
    // rank by how many chain members lie strictly below
    let mut rank = Vec::with_capacity(chain.len());
    for &i in &chain {
        let mut below = 0usize;
        for &j in &chain {
            if compare(&profiles[j], &profiles[i], tol)? == Relation::LessEq {
                below += 1;
            }
        }
        rank.push((below, i));
    }
    rank.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| profiles[a.1].run_id.cmp(&profiles[b.1].run_id)));
    Ok(rank.into_iter().map(|(_, i)| i).collect())
}

/// The chain seeded at the minimal element with the lowest run_id.
pub fn maximal_chain_indices(profiles: &[AccelerationProfile], tol: f64) -> Result<Vec<usize>> {
    let minimal = minimal_indices(profiles, tol)?;
    let start = minimal
        .iter()
        .copied()
        .min_by(|&a, &b| profiles[a].run_id.cmp(&profiles[b].run_id))
        .expect("nonempty");
    chain_from(profiles, start, tol)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Acceleration,
    Energy,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acceleration" => Ok(Objective::Acceleration),
            "energy" => Ok(Objective::Energy),
            other => domain(format!("unknown objective `{other}`, expected acceleration or energy")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub run_id: String,
    pub initial_data_hash: String,
    #[serde(default)]
    pub perturbation: Option<String>,
    pub series: DiagnosticSeries,
}

impl EnsembleMember {
    pub fn profile(&self, objective: Objective) -> Result<AccelerationProfile> {
        let values = match objective {
            Objective::Acceleration => self.series.a.clone(),
            Objective::Energy => self.series.f.clone(),
        };
        AccelerationProfile::new(self.run_id.clone(), self.series.times.clone(), values)
    }
}

/// Runs from the same initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<EnsembleMember>,
}

impl Ensemble {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self> {
        if members.is_empty() {
            return domain("an ensemble needs at least one member");
        }
        let hash = &members[0].initial_data_hash;
        if let Some(m) = members.iter().find(|m| &m.initial_data_hash != hash) {
            return domain(format!("member {} has different initial data", m.run_id));
        }
        let mut ids: Vec<&str> = members.iter().map(|m| m.run_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return domain("run ids must be unique");
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Profiles resampled onto the grid of the first member.
    pub fn profiles(&self, objective: Objective) -> Result<Vec<AccelerationProfile>> {
        let base = self.members[0].profile(objective)?;
        let grid = base.times.clone();
        let mut out = vec![base];
        for m in &self.members[1..] {
            out.push(m.profile(objective)?.resampled(&grid)?);
        }
        Ok(out)
    }
}

/// Run ids of the members not strictly dominated by another member.
pub fn minimal_elements(ens: &Ensemble, objective: Objective, tol: Option<f64>) -> Result<Vec<String>> {
    let profiles = ens.profiles(objective)?;
    let tol = tol.unwrap_or_else(|| default_tolerance(&profiles));
    Ok(minimal_indices(&profiles, tol)?.into_iter().map(|i| profiles[i].run_id.clone()).collect())
}

pub fn maximal_chain(ens: &Ensemble, objective: Objective, tol: Option<f64>) -> Result<Vec<String>> {
    let profiles = ens.profiles(objective)?;
    let tol = tol.unwrap_or_else(|| default_tolerance(&profiles));
    Ok(maximal_chain_indices(&profiles, tol)?.into_iter().map(|i| profiles[i].run_id.clone()).collect())
}

/// Contents of `selection.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub objective: Objective,
    pub tolerance: f64,
    pub run_ids: Vec<String>,
    pub minimal: Vec<String>,
    /// One greedy maximal chain per minimal element.
    pub chains: Vec<Vec<String>>,
    /// `pairwise[i][j]` relates member `i` to member `j`.
    pub pairwise: Vec<Vec<Relation>>,
}

pub fn select(ens: &Ensemble, objective: Objective, tol: Option<f64>) -> Result<SelectionReport> {
    let profiles = ens.profiles(objective)?;
    let tol = tol.unwrap_or_else(|| default_tolerance(&profiles));
    if !(tol >= 0.0) {
        return domain(format!("tolerance must be >= 0, got {tol}"));
    }
    let minimal = minimal_indices(&profiles, tol)?;
    let mut chains = Vec::with_capacity(minimal.len());
    for &m in &minimal {
        chains.push(chain_from(&profiles, m, tol)?.into_iter().map(|i| profiles[i].run_id.clone()).collect());
    }
    let mut pairwise = Vec::with_capacity(profiles.len());
    for p in &profiles {
        pairwise.push(profiles.iter().map(|q| compare(p, q, tol)).collect::<Result<Vec<_>>>()?);
    }
    Ok(SelectionReport {
        objective,
        tolerance: tol,
        run_ids: profiles.iter().map(|p| p.run_id.clone()).collect(),
        minimal: minimal.into_iter().map(|i| profiles[i].run_id.clone()).collect(),
        chains,
        pairwise,
    })
}

/// How ensemble members are derived from a base run. These are heuristics
/// for producing distinct approximate solutions from the same data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationStrategy {
    /// `τ` spread geometrically down to a quarter of the base value.
    #[default]
    TauSweep,
    /// Particle count spread geometrically up to four times the base value.
    ParticleSweep,
    /// Random solver start points.
    SeedSweep,
    /// Coarse-grain resolution spread up to four times the base value.
    ResolutionSweep,
    Identical,
}

impl PerturbationStrategy {
    /// Spec of member `j` of `k`, with a label for the manifest.
    pub fn member(self, base: &RunSpec, seed: u64, j: usize, k: usize) -> (RunSpec, String) {
        let frac = if k > 1 { j as f64 / (k - 1) as f64 } else { 0.0 };
        let factor = 4f64.powf(frac);
        let mut spec = base.clone();
        let label = match self {
            PerturbationStrategy::TauSweep => {
                spec.tau = base.tau / factor;
                format!("heuristic tau sweep: tau = {:e}", spec.tau)
            }
            PerturbationStrategy::ParticleSweep => {
                spec.n_particles = (base.n_particles as f64 * factor).round() as usize;
                format!("heuristic particle sweep: n_particles = {}", spec.n_particles)
            }
            PerturbationStrategy::SeedSweep => {
                let s = seed.wrapping_add(j as u64);
                spec.solver.start = StartPoint::Random { seed: s };
                format!("heuristic seed sweep: start seed = {s}")
            }
            PerturbationStrategy::ResolutionSweep => {
                let n = (base.cells() as f64 * factor).round() as usize;
                spec.n_cells = Some(n.max(1));
                format!("heuristic resolution sweep: n_cells = {}", n.max(1))
            }
            PerturbationStrategy::Identical => "identical copy".to_string(),
        };
        (spec, label)
    }
}

pub fn member_id(j: usize) -> String {
    format!("member_{j:03}")
}

/// Runs all `k` members concurrently; results keep member order.
pub fn run_members(
    base: &RunSpec,
    strategy: PerturbationStrategy,
    k: usize,
    seed: u64,
) -> Result<Vec<(String, RunSpec, String, RunOutcome)>> {
    if k == 0 {
        return domain("ensemble size k must be >= 1");
    }
    base.validate()?;
    let results: Vec<(String, RunSpec, String, Result<RunOutcome>)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let (spec, label) = strategy.member(base, seed, j, k);
            let outcome = spec.execute();
            (member_id(j), spec, label, outcome)
        })
        .collect();
    let failures: Vec<String> = results
        .iter()
        .filter_map(|(id, _, _, r)| r.as_ref().err().map(|e| format!("{id}: {e}")))
        .collect();
    if !failures.is_empty() {
        return Err(Error::PartialEnsemble { failures });
    }
    Ok(results.into_iter().map(|(id, spec, label, r)| (id, spec, label, r.expect("checked"))).collect())
}

pub fn perturb_and_run(base: &RunSpec, strategy: PerturbationStrategy, k: usize, seed: u64) -> Result<Ensemble> {
    let members = run_members(base, strategy, k, seed)?
        .into_iter()
        .map(|(run_id, _, label, outcome)| EnsembleMember {
            run_id,
            initial_data_hash: outcome.initial_hash,
            perturbation: Some(label),
            series: outcome.series,
        })
        .collect();
    Ensemble::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prof(id: &str, values: &[f64]) -> AccelerationProfile {
        let times = (0..values.len()).map(|i| i as f64).collect();
        AccelerationProfile::new(id, times, values.to_vec()).unwrap()
    }

    fn random_profiles(rng: &mut ChaCha8Rng, n: usize, grid: usize) -> Vec<AccelerationProfile> {
        (0..n)
            .map(|i| {
                // coarse values so ties and dominations both occur
                let v: Vec<f64> = (0..grid).map(|_| rng.gen_range(0..4) as f64).collect();
                prof(&format!("r{i:02}"), &v)
            })
            .collect()
    }

    fn brute_force_minimal(ps: &[AccelerationProfile], tol: f64) -> Vec<usize> {
        (0..ps.len())
            .filter(|&i| {
                !(0..ps.len()).any(|j| {
                    j != i
                        && (0..ps[i].values.len()).all(|t| ps[j].values[t] <= ps[i].values[t] + tol)
                        && (0..ps[i].values.len()).any(|t| ps[j].values[t] < ps[i].values[t] - tol)
                })
            })
            .collect()
    }

    #[test]
    fn basic_relations() {
        let one = prof("a", &[1.0, 1.0]);
        let two = prof("b", &[2.0, 2.0]);
        assert_eq!(compare(&one, &two, 0.0).unwrap(), Relation::LessEq);
        assert_eq!(compare(&two, &one, 0.0).unwrap(), Relation::GreaterEq);
        assert_eq!(compare(&one, &one, 0.0).unwrap(), Relation::Equivalent);
        let cross = prof("c", &[1.0, 3.0]);
        assert_eq!(compare(&cross, &two, 0.0).unwrap(), Relation::Incomparable);
        let other_grid = AccelerationProfile::new("d", vec![0.0, 2.0], vec![1.0, 1.0]).unwrap();
        assert!(compare(&one, &other_grid, 0.0).is_err());
        assert!(AccelerationProfile::new("e", vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn minimal_examples() {
        let ps = vec![prof("a", &[1.0, 1.0]), prof("b", &[2.0, 2.0])];
        assert_eq!(minimal_indices(&ps, 0.0).unwrap(), vec![0]);
        let ps = vec![prof("a", &[1.0, 3.0]), prof("b", &[2.0, 2.0])];
        assert_eq!(minimal_indices(&ps, 0.0).unwrap(), vec![0, 1]);
        assert!(minimal_indices(&[], 0.0).is_err());
    }

    #[test]
    fn minimal_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..50 {
            let n = rng.gen_range(1..=30);
            let grid = rng.gen_range(1..6);
            let ps = random_profiles(&mut rng, n, grid);
            let tol = if case % 2 == 0 { 0.0 } else { 0.5 };
            let got = minimal_indices(&ps, tol).unwrap();
            assert!(!got.is_empty());
            assert_eq!(got, brute_force_minimal(&ps, tol));
        }
    }

    #[test]
    fn quasi_order_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let le = |p: &AccelerationProfile, q: &AccelerationProfile| {
            matches!(compare(p, q, 0.0).unwrap(), Relation::LessEq | Relation::Equivalent)
        };
        for _ in 0..1000 {
            let ps = random_profiles(&mut rng, 3, 4);
            assert!(le(&ps[0], &ps[0]));
            if le(&ps[0], &ps[1]) && le(&ps[1], &ps[2]) {
                assert!(le(&ps[0], &ps[2]));
            }
        }
    }

    #[test]
    fn scaling_leaves_selection_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let ps = random_profiles(&mut rng, 12, 4);
            let scaled: Vec<_> = ps.iter().map(|p| p.scaled(3.7).unwrap()).collect();
            assert_eq!(minimal_indices(&ps, 0.0).unwrap(), minimal_indices(&scaled, 0.0).unwrap());
            for i in 0..ps.len() {
                for j in 0..ps.len() {
                    assert_eq!(compare(&ps[i], &ps[j], 0.0).unwrap(), compare(&scaled[i], &scaled[j], 0.0).unwrap());
                }
            }
        }
    }

    #[test]
    fn chains() {
        let ordered = vec![prof("c", &[3.0, 3.0]), prof("a", &[1.0, 1.0]), prof("b", &[2.0, 2.0])];
        assert_eq!(maximal_chain_indices(&ordered, 0.0).unwrap(), vec![1, 2, 0]);
        let antichain = vec![prof("b", &[1.0, 3.0]), prof("a", &[3.0, 1.0]), prof("c", &[2.0, 2.0])];
        assert_eq!(maximal_chain_indices(&antichain, 0.0).unwrap(), vec![1]);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let ps = random_profiles(&mut rng, 15, 3);
            let chain = maximal_chain_indices(&ps, 0.0).unwrap();
            for (a, &i) in chain.iter().enumerate() {
                for &j in &chain[a + 1..] {
                    let r = compare(&ps[i], &ps[j], 0.0).unwrap();
                    assert!(matches!(r, Relation::LessEq | Relation::Equivalent), "{r:?}");
                }
            }
            // maximality
            for k in 0..ps.len() {
                if !chain.contains(&k) {
                    assert!(chain.iter().any(|&c| !compare(&ps[k], &ps[c], 0.0).unwrap().comparable()));
                }
            }
        }
    }

    #[test]
    fn ensemble_resamples_onto_base_grid() {
        let series = |times: Vec<f64>, a: Vec<f64>| DiagnosticSeries { f: a.clone(), a, times, ..Default::default() };
        let m = |id: &str, s: DiagnosticSeries| EnsembleMember {
            run_id: id.into(),
            initial_data_hash: "h".into(),
            perturbation: None,
            series: s,
        };
        let ens = Ensemble::new(vec![
            m("a", series(vec![0.0, 1.0], vec![2.0, 2.0])),
            m("b", series(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 2.0])),
        ])
        .unwrap();
        let ps = ens.profiles(Objective::Acceleration).unwrap();
        assert_eq!(ps[1].values, vec![0.0, 2.0]);
        assert_eq!(minimal_elements(&ens, Objective::Acceleration, None).unwrap(), vec!["b".to_string()]);
        let report = select(&ens, Objective::Energy, Some(0.0)).unwrap();
        assert_eq!(report.pairwise[1][0], Relation::LessEq);
        assert_eq!(report.chains, vec![vec!["b".to_string(), "a".to_string()]]);

        let mut bad = ens.members.clone();
        bad[1].initial_data_hash = "other".into();
        assert!(Ensemble::new(bad).is_err());
    }
}
