//! Independent references: a first-order finite-volume solver and
//! closed-form smooth solutions.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gas::GasLaw;
use crate::init::{InitialCondition, Profile};
use crate::metrics::AtomicMeasure;
use crate::scalar::compensated_sum;

/// Densities below this are treated as vacuum when dividing by `ρ`.
pub const DENSITY_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Outflow,
    Periodic,
}

/// Cell averages of density and momentum on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSolution {
    pub cell_centers: Vec<f64>,
    pub rho: Vec<f64>,
    pub m: Vec<f64>,
    pub time: f64,
    pub cfl: f64,
    pub dx: f64,
}

impl GridSolution {
    /// Midpoint samples of `(ρ, u)` on `n` cells covering `[lo, hi]`.
    pub fn from_fn(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> (f64, f64)) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return domain("grid needs lo < hi and at least one cell");
        }
        let dx = (hi - lo) / n as f64;
        let cell_centers: Vec<f64> = (0..n).map(|j| lo + (j as f64 + 0.5) * dx).collect();
        let mut rho = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n);
        for &x in &cell_centers {
            let (r, u) = f(x);
            if !(r >= 0.0) {
                return domain(format!("density must be >= 0, got {r} at x = {x}"));
            }
            rho.push(r);
            m.push(r * u);
        }
        Ok(Self { cell_centers, rho, m, time: 0.0, cfl: 0.0, dx })
    }

    /// Unit-mass grid data from an initial condition, padded by `pad` on
    /// both sides of its support so outflow never sees mass.
    pub fn from_initial(ic: &InitialCondition, n: usize, pad: f64) -> Result<Self> {
        let fields = ic.fields()?;
        let (lo, hi) = (fields.lo - pad, fields.hi + pad);
        // cell averages from interior midpoints, so a support edge on a cell
        // edge leaks nothing into the padding
        let dx = (hi - lo) / n.max(1) as f64;
        let sub = 16;
        let mut g = Self::from_fn(lo, hi, n, |x| {
            let r = (0..sub)
                .map(|i| (fields.density)(x - 0.5 * dx + (i as f64 + 0.5) * dx / sub as f64))
                .sum::<f64>()
                / sub as f64;
            (r, (fields.velocity)(x))
        })?;
        let mass = g.mass();
        if !(mass > 0.0) {
            return domain("initial density has zero mass");
        }
        for (r, m) in g.rho.iter_mut().zip(g.m.iter_mut()) {
            *r /= mass;
            *m /= mass;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.dx * compensated_sum(self.rho.iter().copied())
    }

    pub fn momentum(&self) -> f64 {
        self.dx * compensated_sum(self.m.iter().copied())
    }

    pub fn velocity(&self, j: usize) -> f64 {
        if self.rho[j] > DENSITY_FLOOR {
            self.m[j] / self.rho[j]
        } else {
            0.0
        }
    }

    /// `∫ ½ m²/ρ + U(ρ) dx`.
    pub fn energy(&self, law: &GasLaw<f64>) -> f64 {
        self.dx
            * compensated_sum(
                (0..self.len()).map(|j| 0.5 * self.m[j] * self.velocity(j) + law.internal_energy(self.rho[j])),
            )
    }

    /// Density as atoms at the cell centers.
    pub fn density_measure(&self) -> Result<AtomicMeasure<f64>> {
        let (x, w): (Vec<f64>, Vec<f64>) = self
            .cell_centers
            .iter()
            .zip(&self.rho)
            .filter(|(_, &r)| r > 0.0)
            .map(|(&x, &r)| (x, r * self.dx))
            .unzip();
        AtomicMeasure::from_atoms(&x, &w)
    }

    /// `(ρ, u)` of the cell containing `x`; vacuum outside the grid.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let lo = self.cell_centers[0] - 0.5 * self.dx;
        let j = ((x - lo) / self.dx).floor();
        if j < 0.0 || j >= self.len() as f64 {
            return (0.0, 0.0);
        }
        let j = j as usize;
        (self.rho[j], self.velocity(j))
    }
}

fn flux(law: &GasLaw<f64>, r: f64, m: f64) -> (f64, f64, f64) {
    let u = if r > DENSITY_FLOOR { m / r } else { 0.0 };
    let speed = u.abs() + law.sound_speed(r.max(0.0));
    (m, m * u + law.pressure(r.max(0.0)), speed)
}

/// Local Lax–Friedrichs fluxes with forward Euler steps,
/// `dt = cfl dx / max(|u| + c)`, up to `t_end`.
pub fn fv_solve(initial: &GridSolution, law: &GasLaw<f64>, t_end: f64, cfl: f64, boundary: Boundary) -> Result<GridSolution> {
    if !(cfl > 0.0 && cfl < 1.0) {
        return domain(format!("cfl must lie in (0, 1), got {cfl}"));
    }
    if !(t_end >= initial.time) {
        return domain("t_end lies before the initial time");
    }
    if initial.len() < 2 {
        return domain("the finite-volume grid needs at least two cells");
    }
    let n = initial.len();
    let dx = initial.dx;
    let mut rho = initial.rho.clone();
    let mut m = initial.m.clone();
    let mut t = initial.time;
    let mut warned = false;
    let neighbour = |j: isize| -> usize {
        match boundary {
            Boundary::Outflow => j.clamp(0, n as isize - 1) as usize,
            Boundary::Periodic => j.rem_euclid(n as isize) as usize,
        }
    };
    while t < t_end {
        let cell: Vec<(f64, f64, f64)> = (0..n).map(|j| flux(law, rho[j], m[j])).collect();
        if !warned && rho.iter().zip(&m).any(|(&r, &q)| r <= DENSITY_FLOOR && q != 0.0) {
            log::warn!("finite-volume solution touched the density floor {DENSITY_FLOOR:e}");
            warned = true;
        }
        let smax = cell.iter().map(|c| c.2).fold(0.0, f64::max);
        let mut dt = if smax > 0.0 { cfl * dx / smax } else { t_end - t };
        if t + dt >= t_end {
            dt = t_end - t;
        }
        // interface k sits between cells k-1 and k, k = 0..=n
        let mut fr = Vec::with_capacity(n + 1);
        let mut fm = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let (l, r) = (neighbour(k as isize - 1), neighbour(k as isize));
            let (a, b) = (cell[l], cell[r]);
            let s = a.2.max(b.2);
            fr.push(0.5 * (a.0 + b.0) - 0.5 * s * (rho[r] - rho[l]));
            fm.push(0.5 * (a.1 + b.1) - 0.5 * s * (m[r] - m[l]));
        }
        if boundary == Boundary::Periodic {
            fr[n] = fr[0];
            fm[n] = fm[0];
        }
        let lambda = dt / dx;
        for j in 0..n {
            rho[j] -= lambda * (fr[j + 1] - fr[j]);
            m[j] -= lambda * (fm[j + 1] - fm[j]);
        }
        t += dt;
    }
    Ok(GridSolution { cell_centers: initial.cell_centers.clone(), rho, m, time: t_end, cfl, dx })
}

/// Closed-form classical solutions used as weak-strong references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothReference {
    Constant { rho: f64, u: f64 },
    /// Pressureless flow from `R_0 ∝ profile` on `[x_min, x_max]` (unit
    /// mass) with `W_0(x) = velocity + slope x`.
    FreeTransport { x_min: f64, x_max: f64, profile: Profile, velocity: f64, slope: f64 },
}

/// A reference evaluated at one time.
#[derive(Clone, Debug)]
pub struct ReferenceSnapshot {
    reference: SmoothReference,
    time: f64,
    normalization: f64,
    /// `sup |∂ₓ W|` at this time.
    pub gradient_bound: f64,
}

impl SmoothReference {
    /// First time at which characteristics cross, if any.
    pub fn lifespan(&self) -> f64 {
        match self {
            SmoothReference::FreeTransport { slope, .. } if *slope < 0.0 => -1.0 / slope,
            _ => f64::INFINITY,
        }
    }

    pub fn at(&self, t: f64) -> Result<ReferenceSnapshot> {
        if !(t >= 0.0) || t >= self.lifespan() {
            return domain(format!("t = {t} lies outside the classical lifespan [0, {})", self.lifespan()));
        }
        let (normalization, gradient_bound) = match self {
            SmoothReference::Constant { rho, .. } => {
                if !(*rho > 0.0) {
                    return domain("constant reference density must be > 0");
                }
                (1.0, 0.0)
            }
            SmoothReference::FreeTransport { x_min, x_max, profile, slope, .. } => {
                if !(x_max > x_min) {
                    return domain("free transport needs x_min < x_max");
                }
                let k = 4000;
                let h = (x_max - x_min) / k as f64;
                let z: f64 = (0..k)
                    .map(|j| {
                        let a = x_min + j as f64 * h;
                        h / 6.0
                            * (profile.eval(a, *x_min, *x_max)
                                + 4.0 * profile.eval(a + 0.5 * h, *x_min, *x_max)
                                + profile.eval(a + h, *x_min, *x_max))
                    })
                    .sum();
                (1.0 / z, slope.abs() / (1.0 + slope * t))
            }
        };
        Ok(ReferenceSnapshot { reference: self.clone(), time: t, normalization, gradient_bound })
    }
}

impl ReferenceSnapshot {
    pub fn time(&self) -> f64 {
        self.time
    }

    /// `(R, W)` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self.reference {
            SmoothReference::Constant { rho, u } => (rho, u),
            SmoothReference::FreeTransport { x_min, x_max, profile, velocity, slope } => {
                let j = 1.0 + slope * self.time;
                let x0 = (x - self.time * velocity) / j;
                (self.normalization * profile.eval(x0, x_min, x_max) / j, velocity + slope * x0)
            }
        }
    }

    /// Image of `[x_min, x_max]`, or the whole line for constant states.
    pub fn support(&self) -> (f64, f64) {
        match self.reference {
            SmoothReference::Constant { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            SmoothReference::FreeTransport { x_min, x_max, velocity, slope, .. } => {
                let map = |x: f64| x * (1.0 + slope * self.time) + self.time * velocity;
                (map(x_min), map(x_max))
            }
        }
    }
}

impl crate::diagnostics::ReferenceField<f64> for ReferenceSnapshot {
    fn eval(&self, x: f64) -> (f64, f64) {
        ReferenceSnapshot::eval(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_state_is_an_equilibrium() {
        let law = GasLaw::new(1.0, 1.4).unwrap();
        let g = GridSolution::from_fn(0.0, 1.0, 50, |_| (0.7, 0.3)).unwrap();
        let out = fv_solve(&g, &law, 0.5, 0.45, Boundary::Periodic).unwrap();
        for j in 0..out.len() {
            assert!((out.rho[j] - 0.7).abs() < 1e-12);
            assert!((out.velocity(j) - 0.3).abs() < 1e-12);
        }
        assert!(fv_solve(&g, &law, 0.5, 1.0, Boundary::Periodic).is_err());
    }

    #[test]
    fn conserves_mass_and_dissipates_energy() {
        let law = GasLaw::new(1.0, 2.0).unwrap();
        let ic = InitialCondition::Riemann {
            x_min: -1.0,
            x_max: 1.0,
            interface: 0.0,
            left_density: 2.0,
            right_density: 1.0,
            left_velocity: 0.5,
            right_velocity: -0.5,
        };
        let g = GridSolution::from_initial(&ic, 400, 2.0).unwrap();
        assert_relative_eq!(g.mass(), 1.0, epsilon = 1e-13);
        let mut prev = g.clone();
        for k in 1..=5 {
            let next = fv_solve(&prev, &law, 0.04 * k as f64, 0.45, Boundary::Outflow).unwrap();
            assert!((next.mass() - 1.0).abs() < 1e-10);
            assert!((next.momentum() - g.momentum()).abs() < 1e-10);
            assert!(next.energy(&law) <= prev.energy(&law) + 1e-8);
            assert!(next.rho.iter().all(|&r| r >= 0.0));
            prev = next;
        }
    }

    #[test]
    fn advects_a_bump_at_first_order() {
        let law = GasLaw::pressureless(2.0).unwrap();
        let bump = |x: f64| Profile::CosineBump.eval(x, -0.5, 0.5);
        let mut errs = Vec::new();
        for n in [200, 400, 800] {
            let g = GridSolution::from_fn(-2.0, 2.0, n, |x| (bump(x), 1.0)).unwrap();
            let out = fv_solve(&g, &law, 0.5, 0.5, Boundary::Outflow).unwrap();
            let err: f64 = (0..n).map(|j| (out.rho[j] - bump(out.cell_centers[j] - 0.5)).abs() * out.dx).sum();
            errs.push(err);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 1.6 && ratio < 2.4, "{errs:?}");
        }
    }

    #[test]
    fn riemann_self_convergence() {
        let law = GasLaw::new(1.0, 2.0).unwrap();
        let ic = InitialCondition::Riemann {
            x_min: -1.0,
            x_max: 1.0,
            interface: 0.0,
            left_density: 2.0,
            right_density: 1.0,
            left_velocity: 0.0,
            right_velocity: 0.0,
        };
        let solve = |n: usize| {
            let g = GridSolution::from_initial(&ic, n, 1.0).unwrap();
            fv_solve(&g, &law, 0.2, 0.45, Boundary::Outflow).unwrap()
        };
        let fine = solve(3200);
        let l1 = |coarse: &GridSolution| -> f64 {
            let r = fine.len() / coarse.len();
            (0..coarse.len())
                .map(|j| {
                    let avg: f64 = fine.rho[j * r..(j + 1) * r].iter().sum::<f64>() / r as f64;
                    (coarse.rho[j] - avg).abs() * coarse.dx
                })
                .sum()
        };
        let errs: Vec<f64> = [100, 200, 400].iter().map(|&n| l1(&solve(n))).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn smooth_references() {
        let c = SmoothReference::Constant { rho: 0.4, u: -1.0 };
        let s = c.at(3.0).unwrap();
        assert_eq!(s.eval(12.0), (0.4, -1.0));
        assert_eq!(s.gradient_bound, 0.0);

        let ft = SmoothReference::FreeTransport { x_min: -1.0, x_max: 1.0, profile: Profile::Uniform, velocity: 0.0, slope: 1.0 };
        let s = ft.at(1.0).unwrap();
        let (r, w) = s.eval(1.0);
        assert_relative_eq!(w, 0.5, epsilon = 1e-14);
        assert_relative_eq!(r, 0.25, epsilon = 1e-12);
        assert_relative_eq!(s.gradient_bound, 0.5);
        assert_eq!(s.support(), (-2.0, 2.0));

        let crossing = SmoothReference::FreeTransport { x_min: -1.0, x_max: 1.0, profile: Profile::Uniform, velocity: 0.0, slope: -1.0 };
        assert!(crossing.at(0.5).is_ok());
        assert!(crossing.at(1.0).is_err());
    }

    #[test]
    fn free_transport_solves_the_pressureless_equations() {
        // ∂ₜR + ∂ₓ(RW) = 0 and ∂ₜW + W ∂ₓW = 0 by central differences
        let ft = SmoothReference::FreeTransport { x_min: -1.0, x_max: 1.0, profile: Profile::CosineBump, velocity: 0.3, slope: 0.7 };
        let h = 1e-5;
        for &(t, x) in &[(0.2, 0.1), (0.5, -0.4), (0.9, 0.8)] {
            let at = |t: f64, x: f64| ft.at(t).unwrap().eval(x);
            let rt = (at(t + h, x).0 - at(t - h, x).0) / (2.0 * h);
            let flux = |x: f64| at(t, x).0 * at(t, x).1;
            let rx = (flux(x + h) - flux(x - h)) / (2.0 * h);
            assert!((rt + rx).abs() < 1e-6, "{}", rt + rx);
            let wt = (at(t + h, x).1 - at(t - h, x).1) / (2.0 * h);
            let wx = (at(t, x + h).1 - at(t, x - h).1) / (2.0 * h);
            assert!((wt + at(t, x).1 * wx).abs() < 1e-6);
        }
    }
}
