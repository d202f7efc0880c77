//! One step of the minimizing-movement scheme.
//!
//! Given particles `x` with velocities `u`, the new positions minimize
//!
//! ```text
//! f(X) = 3/(4τ²) Σ m_i (X_i - x_i - τ u_i)² + Σ_c α_c ΔX_c^{1-γ}
//! ```
//!
//! over nondecreasing `X`. The second sum is the internal energy of the
//! pushed-forward reconstruction, so `α_c = κ M_c^γ` with `M_c` the mass of
//! gap cell `c` (plus the ghost half masses on the two end gaps).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gas::{power_gap, GasLaw};
use crate::scalar::{compensated_sum, Scalar};
use crate::state::{reconstruct_density, total_energy_with, GhostCells, ParticleState};

/// Data of one step.
#[derive(Clone, Debug)]
pub struct StepProblem<T> {
    pub state: ParticleState<T>,
    pub law: GasLaw<T>,
    pub tau: T,
    pub ghosts: GhostCells,
}

impl<T: Scalar> StepProblem<T> {
    pub fn new(state: ParticleState<T>, law: GasLaw<T>, tau: T) -> Result<Self> {
        if !tau.is_finite() || tau <= T::zero() {
            return domain(format!("tau must be > 0, got {tau}"));
        }
        if state.len() < 2 && !law.is_pressureless() {
            return domain("a gas with pressure needs at least two particles");
        }
        Ok(Self { state, law, tau, ghosts: GhostCells::Enabled })
    }

    pub fn with_ghosts(mut self, ghosts: GhostCells) -> Self {
        self.ghosts = ghosts;
        self
    }

    /// Free-transport targets `x + τ u`.
    pub fn targets(&self) -> Vec<T> {
        self.state.positions().iter().zip(self.state.velocities()).map(|(&x, &u)| x + self.tau * u).collect()
    }

    /// Coefficients `α_c` of the internal term, one per gap.
    pub fn gap_coefficients(&self) -> Vec<T> {
        let n = self.state.len();
        if n < 2 {
            return Vec::new();
        }
        let law = &self.law;
        let m = self.state.masses();
        let half = T::c(0.5);
        let pow = |mass: T| law.kappa * mass.powf(law.gamma);
        let mut alpha: Vec<T> = (0..n - 1).map(|c| pow(half * (m[c] + m[c + 1]))).collect();
        if self.ghosts == GhostCells::Enabled {
            alpha[0] = alpha[0] + pow(half * m[0]);
            alpha[n - 2] = alpha[n - 2] + pow(half * m[n - 1]);
        }
        alpha
    }

    fn quad_weight(&self) -> T {
        T::c(1.5) / (self.tau * self.tau)
    }
}

/// Where the optimizer starts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint<T> {
    /// The better of the current positions and the sorted free targets.
    #[default]
    Auto,
    Current,
    FreeTransport,
    /// A random nondecreasing start drawn from the seed.
    Random { seed: u64 },
    Given(Vec<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SolverOptions<T> {
    pub el_tol: T,
    pub max_iters: usize,
    pub degeneracy_eps: T,
    pub start: StartPoint<T>,
    /// Dyadic levels of the bump family used for the optimality residual.
    pub test_levels: usize,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            el_tol: T::c(1e-7),
            max_iters: 2000,
            degeneracy_eps: T::c(crate::state::DEFAULT_DEGENERACY_EPS),
            start: StartPoint::Auto,
            test_levels: 5,
        }
    }
}

/// Energy balance of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationLedger<T> {
    pub energy_before: T,
    pub energy_after: T,
    /// `(1/6) Σ m |W - u|²`.
    pub velocity_term: T,
    /// Bregman gap of the internal energy between the old and new gaps.
    pub bregman_term: T,
    /// `Σ λ_c (Δx_c - ΔX_c)` over the monotonicity multipliers.
    pub multiplier_term: T,
}

impl<T: Scalar> DissipationLedger<T> {
    /// `energy_before - energy_after - dissipation`; zero up to round-off at
    /// an exact minimizer.
    pub fn slack(&self) -> T {
        self.energy_before - self.energy_after - self.velocity_term - self.bregman_term - self.multiplier_term
    }

    pub fn dissipation(&self) -> T {
        self.velocity_term + self.bregman_term + self.multiplier_term
    }

    pub fn holds(&self, tol: T) -> bool {
        self.energy_after + self.dissipation() <= self.energy_before + tol
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSolution<T> {
    /// New positions `X`.
    pub positions: Vec<T>,
    /// `V = (X - x)/τ`.
    pub v: Vec<T>,
    /// `W = 3/2 V - 1/2 u`.
    pub w: Vec<T>,
    /// Monotonicity multipliers, one per gap; nonzero only on contacts.
    pub multipliers: Vec<T>,
    pub objective: T,
    pub el_residual: T,
    pub dissipation: DissipationLedger<T>,
    pub iterations: usize,
}

impl<T: Scalar> StepSolution<T> {
    /// Builds velocities, ledger and residual for given positions and
    /// multipliers.
    pub fn assemble(
        problem: &StepProblem<T>,
        positions: Vec<T>,
        multipliers: Vec<T>,
        tests: &TestFunctionFamily,
    ) -> Result<Self> {
        let n = problem.state.len();
        if positions.len() != n || multipliers.len() != n.saturating_sub(1) {
            return domain("positions and multipliers must match the particle count");
        }
        let tau = problem.tau;
        let x = problem.state.positions();
        let u = problem.state.velocities();
        let m = problem.state.masses();
        let v: Vec<T> = positions.iter().zip(x).map(|(&xn, &xo)| (xn - xo) / tau).collect();
        let (a, b) = (T::c(1.5), T::c(0.5));
        let w: Vec<T> = v.iter().zip(u).map(|(&vi, &ui)| a * vi - b * ui).collect();
        let objective = step_objective(problem, &positions);

        let alpha = problem.gap_coefficients();
        let energy_before = total_energy_with(&problem.state, &problem.law, problem.ghosts).total;
        let internal_after = internal_term(&alpha, problem.law.gamma, &positions);
        let kinetic_after =
            compensated_sum(m.iter().zip(&w).map(|(&mi, &wi)| T::c(0.5) * mi * wi * wi));
        let sixth = T::one() / T::c(6.0);
        let velocity_term = compensated_sum(m.iter().zip(&w).zip(u).map(|((&mi, &wi), &ui)| sixth * mi * (wi - ui) * (wi - ui)));
        let one_minus_gamma = T::one() - problem.law.gamma;
        let bregman_term = compensated_sum((0..n.saturating_sub(1)).filter(|&c| alpha[c] > T::zero()).map(|c| {
            let gap_new = positions[c + 1] - positions[c];
            let gap_old = x[c + 1] - x[c];
            alpha[c] * gap_new.powf(one_minus_gamma) * power_gap(gap_old / gap_new, T::one(), one_minus_gamma)
        }));
        let multiplier_term = compensated_sum(
            multipliers
                .iter()
                .enumerate()
                .map(|(c, &l)| l * ((x[c + 1] - x[c]) - (positions[c + 1] - positions[c]))),
        );
        let dissipation = DissipationLedger {
            energy_before,
            energy_after: kinetic_after + internal_after,
            velocity_term,
            bregman_term,
            multiplier_term,
        };
        let mut sol = Self {
            positions,
            v,
            w,
            multipliers,
            objective,
            el_residual: T::zero(),
            dissipation,
            iterations: 0,
        };
        sol.el_residual = el_residual(problem, &sol, tests);
        Ok(sol)
    }

    /// The state after the step: same masses, positions `X`, velocities `W`.
    pub fn next_state(&self, problem: &StepProblem<T>, degeneracy_eps: T) -> Result<ParticleState<T>> {
        problem.state.advanced(
            self.positions.clone(),
            self.w.clone(),
            problem.state.time() + problem.tau,
            degeneracy_eps,
        )
    }
}

fn internal_term<T: Scalar>(alpha: &[T], gamma: T, positions: &[T]) -> T {
    let e = T::one() - gamma;
    compensated_sum(alpha.iter().enumerate().filter(|(_, a)| **a > T::zero()).map(|(c, &a)| {
        let gap = positions[c + 1] - positions[c];
        if gap > T::zero() {
            a * gap.powf(e)
        } else {
            T::infinity()
        }
    }))
}

/// Objective of the step at candidate positions `X`.
///
/// The internal term is summed cell by cell as `U(r_c) (ΔX_c/Δx_c)^{1-γ} Δx_c`
/// over the reconstruction of the current state. Returns `+∞` if a gap of
/// a gas with pressure is not positive.
pub fn step_objective<T: Scalar>(problem: &StepProblem<T>, positions: &[T]) -> T {
    let y = problem.targets();
    let m = problem.state.masses();
    let quad = problem.quad_weight() * T::c(0.5)
        * compensated_sum(m.iter().zip(positions).zip(&y).map(|((&mi, &xi), &yi)| mi * (xi - yi) * (xi - yi)));
    if problem.law.is_pressureless() || problem.state.len() < 2 {
        return quad;
    }
    let Ok(density) = reconstruct_density(&problem.state, problem.ghosts) else {
        return T::infinity();
    };
    let n = problem.state.len();
    let x = problem.state.positions();
    let e = T::one() - problem.law.gamma;
    let offset = usize::from(problem.ghosts == GhostCells::Enabled);
    let mut terms = Vec::with_capacity(density.cell_densities.len());
    for (k, (width, &r)) in density.widths().zip(&density.cell_densities).enumerate() {
        // cell k stretches like gap c; ghost cells copy their neighbour
        let c = k.saturating_sub(offset).min(n - 2);
        let new_gap = positions[c + 1] - positions[c];
        if !(new_gap > T::zero()) {
            return T::infinity();
        }
        let ratio = new_gap / (x[c + 1] - x[c]);
        terms.push(problem.law.internal_energy(r) * ratio.powf(e) * width);
    }
    quad + compensated_sum(terms)
}

/// Gradient of [`step_objective`].
pub fn step_gradient<T: Scalar>(problem: &StepProblem<T>, positions: &[T]) -> Vec<T> {
    Objective::new(problem).gradient(positions)
}

/// `D(a) = a^{1-γ} - 1 + (γ-1)(a - 1)`, the Bregman gap of `a ↦ a^{1-γ}` at 1.
pub fn bregman_divergence<T: Scalar>(law: &GasLaw<T>, gap_ratio: T) -> Result<T> {
    if !(gap_ratio > T::zero()) || !gap_ratio.is_finite() {
        return domain(format!("gap ratio must be > 0, got {gap_ratio}"));
    }
    Ok(power_gap(gap_ratio, T::one(), T::one() - law.gamma))
}

/// A test function for the optimality residual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction<T> {
    Constant,
    Identity,
    /// `(1 - ((x - c)/r)²)³` on `|x - c| < r`.
    Bump { center: T, radius: T },
}

/// Lipschitz constant of the unit bump of radius one.
const BUMP_LIP: f64 = 1.717_300_206_719_838;

impl<T: Scalar> TestFunction<T> {
    pub fn eval(&self, x: T) -> T {
        match *self {
            TestFunction::Constant => T::one(),
            TestFunction::Identity => x,
            TestFunction::Bump { center, radius } => {
                let s = (x - center) / radius;
                let q = T::one() - s * s;
                if q <= T::zero() {
                    T::zero()
                } else {
                    q * q * q
                }
            }
        }
    }

    pub fn derivative(&self, x: T) -> T {
        match *self {
            TestFunction::Constant => T::zero(),
            TestFunction::Identity => T::one(),
            TestFunction::Bump { center, radius } => {
                let s = (x - center) / radius;
                let q = T::one() - s * s;
                if q <= T::zero() {
                    T::zero()
                } else {
                    -T::c(6.0) * s * q * q / radius
                }
            }
        }
    }

    /// `sup |ζ| + Lip ζ` over `[lo, hi]`.
    pub fn bl_norm(&self, lo: T, hi: T) -> T {
        match *self {
            TestFunction::Constant => T::one(),
            TestFunction::Identity => lo.abs().max(hi.abs()) + T::one(),
            TestFunction::Bump { radius, .. } => T::one() + T::c(BUMP_LIP) / radius,
        }
    }
}

/// The identity plus smooth bumps on dyadic grids over the particle hull.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFunctionFamily {
    pub levels: usize,
}

impl Default for TestFunctionFamily {
    fn default() -> Self {
        Self { levels: 5 }
    }
}

impl TestFunctionFamily {
    pub fn functions<T: Scalar>(&self, lo: T, hi: T) -> Vec<TestFunction<T>> {
        let mut out = vec![TestFunction::Identity];
        let width = hi - lo;
        if !(width > T::zero()) {
            return out;
        }
        for level in 0..=self.levels {
            let k = 1usize << level;
            let h = width / T::from_usize_c(k);
            for j in 0..=k {
                out.push(TestFunction::Bump { center: lo + h * T::from_usize_c(j), radius: h });
            }
        }
        out
    }
}

/// Largest normalized gap in the discrete Euler-Lagrange equation
///
/// ```text
/// Σ_i ζ(x_i) m_i (W_i - u_i)/τ = Σ_c (Π_c + λ_c) (ζ(x_{c+1}) - ζ(x_c))
/// ```
///
/// where `Π_c = P(r_c) (ΔX_c/Δx_c)^{-γ}` is the transported pressure of gap
/// cell `c` (ghost pressure included on the end gaps).
pub fn el_residual<T: Scalar>(problem: &StepProblem<T>, sol: &StepSolution<T>, tests: &TestFunctionFamily) -> T {
    let n = problem.state.len();
    let x = problem.state.positions();
    let u = problem.state.velocities();
    let m = problem.state.masses();
    let tau = problem.tau;
    let alpha = problem.gap_coefficients();
    let gm1 = problem.law.gamma - T::one();
    let stress: Vec<T> = (0..n.saturating_sub(1))
        .map(|c| {
            let gap = sol.positions[c + 1] - sol.positions[c];
            let pi = if alpha[c] > T::zero() { gm1 * alpha[c] * gap.powf(-problem.law.gamma) } else { T::zero() };
            pi + sol.multipliers[c]
        })
        .collect();
    let accel: Vec<T> = (0..n).map(|i| m[i] * (sol.w[i] - u[i]) / tau).collect();
    let (lo, hi) = (x[0], x[n - 1]);
    let mut worst = T::zero();
    for f in tests.functions(lo, hi) {
        let z: Vec<T> = x.iter().map(|&xi| f.eval(xi)).collect();
        let lhs = compensated_sum(z.iter().zip(&accel).map(|(&zi, &ai)| zi * ai));
        let rhs = compensated_sum(stress.iter().enumerate().map(|(c, &s)| s * (z[c + 1] - z[c])));
        worst = worst.max((lhs - rhs).abs() / f.bl_norm(lo, hi));
    }
    worst
}

/// Reduced objective data shared by the optimizer.
struct Objective<'a, T> {
    m: &'a [T],
    y: Vec<T>,
    alpha: Vec<T>,
    q: T,
    gamma: T,
}

impl<'a, T: Scalar> Objective<'a, T> {
    fn new(problem: &'a StepProblem<T>) -> Self {
        Self {
            m: problem.state.masses(),
            y: problem.targets(),
            alpha: problem.gap_coefficients(),
            q: problem.quad_weight(),
            gamma: problem.law.gamma,
        }
    }

    fn value(&self, x: &[T]) -> T {
        let half = T::c(0.5);
        let quad = half * self.q * compensated_sum(self.m.iter().zip(x).zip(&self.y).map(|((&m, &xi), &yi)| m * (xi - yi) * (xi - yi)));
        quad + internal_term(&self.alpha, self.gamma, x)
    }

    /// `φ'(gap)` weighted by `α`, `φ(a) = a^{1-γ}`.
    fn gap_first(&self, c: usize, gap: T) -> T {
        if self.alpha[c] > T::zero() {
            self.alpha[c] * (T::one() - self.gamma) * gap.powf(-self.gamma)
        } else {
            T::zero()
        }
    }

    fn gap_second(&self, c: usize, gap: T) -> T {
        if self.alpha[c] > T::zero() {
            self.alpha[c] * self.gamma * (self.gamma - T::one()) * gap.powf(-self.gamma - T::one())
        } else {
            T::zero()
        }
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        let n = x.len();
        let mut g: Vec<T> = (0..n).map(|i| self.q * self.m[i] * (x[i] - self.y[i])).collect();
        for c in 0..n.saturating_sub(1) {
            let d = self.gap_first(c, x[c + 1] - x[c]);
            g[c + 1] = g[c + 1] + d;
            g[c] = g[c] - d;
        }
        g
    }
}

/// Consecutive particles moving rigidly; block `k` is `starts[k]..starts[k+1]`.
struct Blocks {
    starts: Vec<usize>,
    n: usize,
}

impl Blocks {
    fn singletons(n: usize) -> Self {
        Self { starts: (0..n).collect(), n }
    }

    fn len(&self) -> usize {
        self.starts.len()
    }

    fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.starts[k]..self.starts.get(k + 1).copied().unwrap_or(self.n)
    }

    /// Gap between block `k` and `k+1`.
    fn boundary_gap(&self, k: usize) -> usize {
        self.starts[k + 1] - 1
    }

    fn merge_at_gap(&mut self, c: usize) {
        if let Ok(k) = self.starts.binary_search(&(c + 1)) {
            self.starts.remove(k);
        }
    }

    fn split_at_gap(&mut self, c: usize) {
        if let Err(k) = self.starts.binary_search(&(c + 1)) {
            self.starts.insert(k, c + 1);
        }
    }
}

/// Tridiagonal solve with diagonal `d`, symmetric off-diagonal `e`.
fn thomas<T: Scalar>(d: &[T], e: &[T], rhs: &[T]) -> Vec<T> {
    let k = d.len();
    let mut c = vec![T::zero(); k];
    let mut r = vec![T::zero(); k];
    let mut piv = d[0];
    c[0] = if k > 1 { e[0] / piv } else { T::zero() };
    r[0] = rhs[0] / piv;
    for i in 1..k {
        piv = d[i] - e[i - 1] * c[i - 1];
        if i + 1 < k {
            c[i] = e[i] / piv;
        }
        r[i] = (rhs[i] - e[i - 1] * r[i - 1]) / piv;
    }
    for i in (0..k - 1).rev() {
        r[i] = r[i] - c[i] * r[i + 1];
    }
    r
}

/// Pushes particles right until every gap is at least `g`.
fn enforce_spacing<T: Scalar>(x: &mut [T], g: T) {
    for i in 1..x.len() {
        if x[i] < x[i - 1] + g {
            x[i] = x[i - 1] + g;
        }
    }
}

fn width<T: Scalar>(x: &[T]) -> T {
    let lo = x.iter().copied().fold(T::infinity(), T::min);
    let hi = x.iter().copied().fold(T::neg_infinity(), T::max);
    hi - lo
}

fn starting_point<T: Scalar>(problem: &StepProblem<T>, obj: &Objective<T>, opts: &SolverOptions<T>, g: T) -> Result<Vec<T>> {
    let x = problem.state.positions().to_vec();
    let mut sorted_targets = obj.y.clone();
    sorted_targets.sort_by(|a, b| a.partial_cmp(b).expect("finite targets"));
    let mut start = match &opts.start {
        StartPoint::Auto => {
            let mut a = x;
            enforce_spacing(&mut a, g);
            let mut b = sorted_targets;
            enforce_spacing(&mut b, g);
            if obj.value(&b) < obj.value(&a) {
                b
            } else {
                a
            }
        }
        StartPoint::Current => x,
        StartPoint::FreeTransport => sorted_targets,
        StartPoint::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let spread = width(&obj.y).max(width(&x)) / T::from_usize_c(x.len());
            let mut p: Vec<T> = obj
                .y
                .iter()
                .map(|&yi| yi + spread * T::c(rng.gen_range(-1.0..1.0)))
                .collect();
            p.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            p
        }
        StartPoint::Given(p) => {
            if p.len() != x.len() || p.iter().any(|v| !v.is_finite()) {
                return domain("given start must have one finite position per particle");
            }
            p.clone()
        }
    };
    if start.windows(2).any(|w| w[1] < w[0]) {
        return domain("start positions must be nondecreasing");
    }
    enforce_spacing(&mut start, g);
    Ok(start)
}

/// Minimizes the step objective over nondecreasing positions.
///
/// Active-set Newton: gaps that reach the minimal spacing glue their
/// particles into rigid blocks, Newton steps act on block positions, and a
/// contact is released when its multiplier turns negative.
pub fn solve_step<T: Scalar>(problem: &StepProblem<T>, opts: &SolverOptions<T>) -> Result<StepSolution<T>> {
    let n = problem.state.len();
    let tests = TestFunctionFamily { levels: opts.test_levels };
    let obj = Objective::new(problem);
    let w_ref = width(problem.state.positions()).max(width(&obj.y));
    let g = T::c(2.0) * opts.degeneracy_eps * w_ref;
    let mut x = starting_point(problem, &obj, opts, g)?;
    if n == 1 {
        let mut sol = StepSolution::assemble(problem, obj.y.clone(), Vec::new(), &tests)?;
        sol.iterations = 0;
        return Ok(sol);
    }

    let mut blocks = Blocks::singletons(n);
    // gaps already at the bound start glued; the first release test frees
    // those that should open
    for c in 0..n - 1 {
        if x[c + 1] - x[c] <= g {
            blocks.merge_at_gap(c);
        }
    }
    let mut f = obj.value(&x);
    let eps = T::epsilon();
    let armijo = T::c(1e-4);
    let mut iterations = 0;
    let mut converged = false;
    let mut flat_steps = 0;
    let mut last_grad_norm = T::infinity();
    while iterations < opts.max_iters {
        iterations += 1;
        let grad = obj.gradient(&x);
        let kb = blocks.len();
        let gz: Vec<T> = (0..kb).map(|k| compensated_sum(blocks.range(k).map(|i| grad[i]))).collect();
        last_grad_norm = gz.iter().fold(T::zero(), |a, v| a.max(v.abs()));

        let stationary = last_grad_norm <= opts.el_tol * (T::one() + f.abs()) * T::c(1e-5) || flat_steps >= 3;
        if !stationary {
            let mut diag: Vec<T> = (0..kb).map(|k| obj.q * compensated_sum(blocks.range(k).map(|i| obj.m[i]))).collect();
            let mut off = vec![T::zero(); kb.saturating_sub(1)];
            for k in 0..kb.saturating_sub(1) {
                let c = blocks.boundary_gap(k);
                let h = obj.gap_second(c, x[c + 1] - x[c]);
                diag[k] = diag[k] + h;
                diag[k + 1] = diag[k + 1] + h;
                off[k] = -h;
            }
            let rhs: Vec<T> = gz.iter().map(|&v| -v).collect();
            let dir = thomas(&diag, &off, &rhs);
            let slope = compensated_sum(gz.iter().zip(&dir).map(|(&a, &b)| a * b));
            let scale = x.iter().fold(T::one(), |a, v| a.max(v.abs()));
            let moves = dir.iter().fold(T::zero(), |a, v| a.max(v.abs())) > T::c(4.0) * eps * scale;
            if slope < T::zero() && moves {
                // largest feasible step
                let mut alpha_max = T::infinity();
                let mut blocking = Vec::new();
                for k in 0..kb - 1 {
                    let closing = dir[k] - dir[k + 1];
                    if closing > T::zero() {
                        let c = blocks.boundary_gap(k);
                        let room = (x[c + 1] - x[c] - g).max(T::zero());
                        let a = room / closing;
                        if a < alpha_max {
                            alpha_max = a;
                            blocking.clear();
                            blocking.push(c);
                        } else if a == alpha_max {
                            blocking.push(c);
                        }
                    }
                }
                if alpha_max <= T::zero() {
                    for &c in &blocking {
                        blocks.merge_at_gap(c);
                    }
                    continue;
                }
                let mut step = alpha_max.min(T::one());
                let mut accepted = None;
                for _ in 0..80 {
                    let mut trial = x.clone();
                    for k in 0..kb {
                        for i in blocks.range(k) {
                            trial[i] = trial[i] + step * dir[k];
                        }
                    }
                    let ft = obj.value(&trial);
                    if ft.is_finite() && ft <= f + armijo * step * slope {
                        accepted = Some((trial, ft));
                        break;
                    }
                    step = step * T::c(0.5);
                }
                if accepted.is_none() {
                    // objective differences are lost in round-off here; accept
                    // the full step if it shrinks the reduced gradient
                    step = alpha_max.min(T::one());
                    let mut trial = x.clone();
                    for k in 0..kb {
                        for i in blocks.range(k) {
                            trial[i] = trial[i] + step * dir[k];
                        }
                    }
                    let gt = obj.gradient(&trial);
                    let norm = (0..kb)
                        .map(|k| compensated_sum(blocks.range(k).map(|i| gt[i])).abs())
                        .fold(T::zero(), T::max);
                    let ft = obj.value(&trial);
                    if ft.is_finite() && norm < T::c(0.5) * last_grad_norm {
                        accepted = Some((trial, ft));
                    }
                }
                if let Some((mut trial, _)) = accepted {
                    if step == alpha_max {
                        for &c in &blocking {
                            // make the contact exact by shifting the right block
                            let k = blocks.starts.binary_search(&(c + 1)).expect("boundary gap");
                            let shift = trial[c] + g - trial[c + 1];
                            for i in blocks.range(k) {
                                trial[i] = trial[i] + shift;
                            }
                        }
                        for &c in &blocking {
                            blocks.merge_at_gap(c);
                        }
                    }
                    x = trial;
                    let f_new = obj.value(&x);
                    if f - f_new <= T::c(4.0) * eps * (T::one() + f.abs()) {
                        flat_steps += 1;
                    } else {
                        flat_steps = 0;
                    }
                    f = f_new;
                    continue;
                }
            }
        }
        // stationary on the current face: test the contact multipliers
        let release_tol = opts.el_tol * (T::one() + f.abs()) * T::c(1e-3);
        let mut worst: Option<(usize, T)> = None;
        for k in 0..blocks.len() {
            let r = blocks.range(k);
            let mut lam = T::zero();
            for c in r.start..r.end - 1 {
                lam = lam - grad[c];
                if lam < -release_tol && worst.map_or(true, |(_, w)| lam < w) {
                    worst = Some((c, lam));
                }
            }
        }
        match worst {
            Some((c, _)) => {
                blocks.split_at_gap(c);
                flat_steps = 0;
            }
            None => {
                converged = true;
                break;
            }
        }
    }

    let grad = obj.gradient(&x);
    let mut multipliers = vec![T::zero(); n - 1];
    for k in 0..blocks.len() {
        let r = blocks.range(k);
        let mut lam = T::zero();
        for c in r.start..r.end - 1 {
            lam = lam - grad[c];
            multipliers[c] = lam;
        }
    }
    let tol = opts.el_tol * (T::one() + f.abs());
    let min_lam = multipliers.iter().copied().fold(T::zero(), T::min);
    if !converged || last_grad_norm > tol || min_lam < -tol {
        return Err(Error::Solver {
            iterations,
            residual: last_grad_norm.max(-min_lam).f64(),
            last_iterate: x.iter().map(|v| v.f64()).collect(),
        });
    }
    let mut sol = StepSolution::assemble(problem, x, multipliers, &tests)?;
    sol.iterations = iterations;
    Ok(sol)
}
