//! Coarse-grained moments, Jensen-gap defects and the diagnostics of a run.
//!
//! A particle state is refined into Lagrangian pieces: every gap cell carries
//! half of each neighbouring particle, spread uniformly, and the ghost cells
//! carry the outer half masses. Coarse cells average these pieces; the
//! convexity gaps of `|m|²/ρ` and `P(ρ)` under this averaging are the defects.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gas::GasLaw;
use crate::scalar::{compensated_sum, Scalar};
use crate::state::{fmt17, second_moment, total_energy_with, GhostCells, ParticleState};
use crate::stepper::TestFunction;
use crate::trajectory::{InterpolantKind, InterpolantSample, Trajectory};

/// Space dimension of the scheme.
const DIM: f64 = 1.0;

#[derive(Clone, Copy, Debug)]
struct Piece<T> {
    lo: T,
    hi: T,
    density: T,
    atoms: [(T, T); 2],
}

fn fine_pieces<T: Scalar>(state: &ParticleState<T>, ghosts: GhostCells) -> Result<Vec<Piece<T>>> {
    let n = state.len();
    if n < 2 {
        return domain("coarse graining needs at least two particles");
    }
    let (x, m, v) = (state.positions(), state.masses(), state.velocities());
    let half = T::c(0.5);
    let mut out = Vec::with_capacity(n + 1);
    let piece = |lo: T, hi: T, atoms: [(T, T); 2]| Piece { lo, hi, density: (atoms[0].0 + atoms[1].0) / (hi - lo), atoms };
    if ghosts == GhostCells::Enabled {
        let g = x[1] - x[0];
        out.push(piece(x[0] - g, x[0], [(half * m[0], v[0]), (T::zero(), v[0])]));
    }
    for c in 0..n - 1 {
        let mut left = half * m[c];
        let mut right = half * m[c + 1];
        if ghosts == GhostCells::Disabled {
            // outer half masses fold into the end gaps
            if c == 0 {
                left = m[0];
            }
            if c == n - 2 {
                right = m[n - 1];
            }
        }
        out.push(piece(x[c], x[c + 1], [(left, v[c]), (right, v[c + 1])]));
    }
    if ghosts == GhostCells::Enabled {
        let g = x[n - 1] - x[n - 2];
        out.push(piece(x[n - 1], x[n - 1] + g, [(half * m[n - 1], v[n - 1]), (T::zero(), v[n - 1])]));
    }
    Ok(out)
}

/// Cell averages of density, velocity, `|m|²/ρ` and pressure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseField<T> {
    pub cell_edges: Vec<T>,
    pub rbar: Vec<T>,
    pub ubar: Vec<T>,
    /// Cell average of `|m|²/ρ`.
    pub second_moment_flux: Vec<T>,
    /// Cell average of `P(ρ)`.
    pub pressure_avg: Vec<T>,
    /// `second_moment_flux - rbar ubar²`, accumulated as a variance.
    pub kinetic_gap: Vec<T>,
    /// `pressure_avg - P(rbar)`, accumulated piece by piece.
    pub pressure_gap: Vec<T>,
}

impl<T: Scalar> CoarseField<T> {
    pub fn n_cells(&self) -> usize {
        self.rbar.len()
    }

    pub fn widths(&self) -> Vec<T> {
        self.cell_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn centers(&self) -> Vec<T> {
        self.cell_edges.windows(2).map(|w| T::c(0.5) * (w[0] + w[1])).collect()
    }

    pub fn mass(&self) -> T {
        compensated_sum(self.widths().into_iter().zip(&self.rbar).map(|(w, &r)| w * r))
    }

    /// `Σ w (½ rbar ubar² + U(rbar))`, the energy of the averaged state.
    pub fn resolved_energy(&self, law: &GasLaw<T>) -> T {
        let half = T::c(0.5);
        compensated_sum(
            self.widths()
                .into_iter()
                .zip(self.rbar.iter().zip(&self.ubar))
                .map(|(w, (&r, &u))| w * (half * r * u * u + law.internal_energy(r))),
        )
    }
}

/// Averages `sample` over `n_cells` uniform cells covering the support of
/// its reconstruction.
pub fn coarse_grain<T: Scalar>(
    sample: &InterpolantSample<T>,
    law: &GasLaw<T>,
    ghosts: GhostCells,
    n_cells: usize,
) -> Result<CoarseField<T>> {
    let pieces = fine_pieces(&sample.state, ghosts)?;
    let lo = pieces[0].lo;
    let hi = pieces[pieces.len() - 1].hi;
    coarse_grain_pieces(&pieces, law, lo, hi, n_cells)
}

/// Like [`coarse_grain`] on uniform cells over `[lo, hi]`; mass outside the
/// window is ignored.
pub fn coarse_grain_window<T: Scalar>(
    state: &ParticleState<T>,
    law: &GasLaw<T>,
    ghosts: GhostCells,
    lo: T,
    hi: T,
    n_cells: usize,
) -> Result<CoarseField<T>> {
    let pieces = fine_pieces(state, ghosts)?;
    coarse_grain_pieces(&pieces, law, lo, hi, n_cells)
}

fn coarse_grain_pieces<T: Scalar>(pieces: &[Piece<T>], law: &GasLaw<T>, lo: T, hi: T, n_cells: usize) -> Result<CoarseField<T>> {
    if n_cells == 0 {
        return domain("n_cells must be >= 1");
    }
    if !(hi > lo) {
        return domain("coarse window is empty");
    }
    let h = (hi - lo) / T::from_usize_c(n_cells);
    let mut edges: Vec<T> = (0..=n_cells).map(|j| lo + h * T::from_usize_c(j)).collect();
    edges[n_cells] = hi;

    // overlaps (cell, piece, overlap length)
    let mut overlaps: Vec<(usize, usize, T)> = Vec::new();
    for (p, piece) in pieces.iter().enumerate() {
        let a = piece.lo.max(lo);
        let b = piece.hi.min(hi);
        if !(b > a) {
            continue;
        }
        let first = ((a - lo) / h).floor().to_usize().unwrap_or(0).min(n_cells - 1);
        let mut j = first;
        while j < n_cells && edges[j] < b {
            let ov = b.min(edges[j + 1]) - a.max(edges[j]);
            if ov > T::zero() {
                overlaps.push((j, p, ov));
            }
            j += 1;
        }
    }

    let mut mass = vec![Vec::new(); n_cells];
    let mut mom = vec![Vec::new(); n_cells];
    let mut kin = vec![Vec::new(); n_cells];
    let mut pint = vec![Vec::new(); n_cells];
    for &(j, p, ov) in &overlaps {
        let piece = &pieces[p];
        let theta = ov / (piece.hi - piece.lo);
        for &(m, v) in &piece.atoms {
            mass[j].push(theta * m);
            mom[j].push(theta * m * v);
            kin[j].push(theta * m * v * v);
        }
        pint[j].push(law.pressure(piece.density) * ov);
    }
    let widths: Vec<T> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    let mut rbar = Vec::with_capacity(n_cells);
    let mut ubar = Vec::with_capacity(n_cells);
    let mut flux = Vec::with_capacity(n_cells);
    let mut pavg = Vec::with_capacity(n_cells);
    for j in 0..n_cells {
        let mj = compensated_sum(mass[j].iter().copied());
        let w = widths[j];
        rbar.push(mj / w);
        ubar.push(if mj > T::zero() { compensated_sum(mom[j].iter().copied()) / mj } else { T::zero() });
        flux.push(compensated_sum(kin[j].iter().copied()) / w);
        pavg.push(compensated_sum(pint[j].iter().copied()) / w);
    }
    let mut kgap = vec![Vec::new(); n_cells];
    let mut pgap = vec![Vec::new(); n_cells];
    for &(j, p, ov) in &overlaps {
        let piece = &pieces[p];
        let theta = ov / (piece.hi - piece.lo);
        for &(m, v) in &piece.atoms {
            let d = v - ubar[j];
            kgap[j].push(theta * m * d * d);
        }
        pgap[j].push(law.pressure_gap(piece.density, rbar[j]) * ov);
    }
    let kinetic_gap = (0..n_cells).map(|j| compensated_sum(kgap[j].iter().copied()) / widths[j]).collect();
    let pressure_gap = (0..n_cells).map(|j| compensated_sum(pgap[j].iter().copied()) / widths[j]).collect();
    Ok(CoarseField {
        cell_edges: edges,
        rbar,
        ubar,
        second_moment_flux: flux,
        pressure_avg: pavg,
        kinetic_gap,
        pressure_gap,
    })
}

/// Kinetic defect `Q` and pressure defect `φ` per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectFields<T> {
    pub q: Vec<T>,
    pub phi: Vec<T>,
    pub widths: Vec<T>,
}

impl<T: Scalar> DefectFields<T> {
    pub fn zero_like(field: &CoarseField<T>) -> Self {
        let n = field.n_cells();
        Self { q: vec![T::zero(); n], phi: vec![T::zero(); n], widths: field.widths() }
    }

    /// `Σ Q w`.
    pub fn q_total(&self) -> T {
        compensated_sum(self.q.iter().zip(&self.widths).map(|(&q, &w)| q * w))
    }

    /// `Σ φ w`.
    pub fn phi_total(&self) -> T {
        compensated_sum(self.phi.iter().zip(&self.widths).map(|(&p, &w)| p * w))
    }

    /// Energy carried by the defects, `Σ (½ Q + φ/(γ-1)) w`.
    pub fn energy(&self, law: &GasLaw<T>) -> T {
        T::c(0.5) * self.q_total() + self.phi_total() / (law.gamma - T::one())
    }
}

/// Jensen gaps per cell. Round-off negatives down to `-1e-10` are clamped
/// to zero; anything below is an internal-consistency error.
pub fn defects<T: Scalar>(field: &CoarseField<T>, law: &GasLaw<T>) -> Result<DefectFields<T>> {
    let tol = T::tol(1e-10);
    let n = field.n_cells();
    let mut q = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for j in 0..n {
        let direct_q = field.second_moment_flux[j] - field.rbar[j] * field.ubar[j] * field.ubar[j];
        let direct_phi = field.pressure_avg[j] - law.pressure(field.rbar[j]);
        let scale_q = T::one() + field.second_moment_flux[j].abs();
        let scale_p = T::one() + field.pressure_avg[j].abs();
        let (gq, gp) = (field.kinetic_gap[j], field.pressure_gap[j]);
        if gq < -tol || gp < -tol || direct_q < -tol * scale_q * T::c(1e3) || direct_phi < -tol * scale_p * T::c(1e3) {
            return Err(Error::Consistency(format!(
                "Jensen gap negative in cell {j}: Q = {:e}, phi = {:e}",
                gq.min(direct_q).f64(),
                gp.min(direct_phi).f64()
            )));
        }
        q.push(gq.max(T::zero()));
        phi.push(gp.max(T::zero()));
    }
    Ok(DefectFields { q, phi, widths: field.widths() })
}

/// `∫ (|M|²/ρ)_ν + d P_ε dx`: the kinetic flux of the piecewise-linear sample
/// plus the pressure of the piecewise-constant one. Both integrals are
/// resolution independent, so no coarse grid is needed.
pub fn acceleration<T: Scalar>(
    eps: &InterpolantSample<T>,
    nu: &InterpolantSample<T>,
    law: &GasLaw<T>,
    ghosts: GhostCells,
) -> T {
    let kinetic = compensated_sum(nu.state.masses().iter().zip(nu.state.velocities()).map(|(&m, &v)| m * v * v));
    let internal = total_energy_with(&eps.state, law, ghosts).internal;
    let pressure = if law.is_pressureless() { T::zero() } else { (law.gamma - T::one()) * internal };
    kinetic + T::c(DIM) * pressure
}

/// Acceleration of a trajectory at `t`.
pub fn acceleration_at<T: Scalar>(traj: &Trajectory<T>, t: T) -> Result<T> {
    let eps = traj.sample(t, InterpolantKind::PiecewiseConstant)?;
    let nu = traj.sample(t, InterpolantKind::PiecewiseLinear)?;
    Ok(acceleration(&eps, &nu, traj.law(), traj.ghosts()))
}

/// `A(t) = Σ m X_t W_t` on the piecewise-linear interpolant.
pub fn virial_moment<T: Scalar>(traj: &Trajectory<T>, t: T) -> Result<T> {
    let s = traj.sample(t, InterpolantKind::PiecewiseLinear)?.state;
    Ok(compensated_sum(
        s.masses().iter().zip(s.positions()).zip(s.velocities()).map(|((&m, &x), &w)| m * x * w),
    ))
}

/// `A'(t) - a(t)` with `A'` from a central difference: inside a step the
/// half width stays within the step, where `A` is quadratic and the
/// difference is exact; at a node it is `τ/4`.
pub fn virial_residual<T: Scalar>(traj: &Trajectory<T>, t: T) -> Result<T> {
    let tau = traj.tau();
    let (t0, t1) = (traj.start_time(), traj.final_time());
    if !(t > t0 + tau && t < t1 - tau) {
        return domain(format!("virial residual needs t in ({}, {}), got {t}", t0 + tau, t1 - tau));
    }
    let (_, s) = traj.locate(t)?;
    let quarter = T::c(0.25);
    let h = if s > T::zero() && s < T::one() { quarter * tau * s.min(T::one() - s) } else { quarter * tau };
    let d = (virial_moment(traj, t + h)? - virial_moment(traj, t - h)?) / (h + h);
    Ok(d - acceleration_at(traj, t)?)
}

/// Smooth reference `(R, W)` evaluated at a point.
pub trait ReferenceField<T> {
    fn eval(&self, x: T) -> (T, T);
}

impl<T, F: Fn(T) -> (T, T)> ReferenceField<T> for F {
    fn eval(&self, x: T) -> (T, T) {
        self(x)
    }
}

/// Relative energy of the coarse state and its defects with respect to a
/// smooth reference evaluated at cell centers.
pub fn relative_energy<T: Scalar>(
    field: &CoarseField<T>,
    defects: &DefectFields<T>,
    law: &GasLaw<T>,
    reference: &dyn ReferenceField<T>,
) -> Result<T> {
    let widths = field.widths();
    let half = T::c(0.5);
    let mut terms = Vec::with_capacity(field.n_cells());
    for (j, x) in field.centers().into_iter().enumerate() {
        let (r_ref, w_ref) = reference.eval(x);
        if !(r_ref > T::zero()) {
            return domain(format!("reference density must be > 0, got {r_ref} at x = {x}"));
        }
        let (r, u) = (field.rbar[j], field.ubar[j]);
        let du = w_ref - u;
        let resolved = half * r * du * du + law.internal_energy_gap(r, r_ref);
        terms.push(resolved * widths[j]);
    }
    Ok(compensated_sum(terms) + defects.energy(law))
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
const GAUSS5: [(f64, f64); 5] = [
    (0.046_910_077_030_668_0, 0.118_463_442_528_094_5),
    (0.230_765_344_947_158_5, 0.239_314_335_249_683_2),
    (0.5, 0.284_444_444_444_444_4),
    (0.769_234_655_052_841_5, 0.239_314_335_249_683_2),
    (0.953_089_922_969_332_0, 0.118_463_442_528_094_5),
];

/// Residuals of the continuity and momentum equations tested against
/// `η(t) ζ(x)` with `η = sin²(π (t - t_0)/T)` over the whole run.
pub fn weak_form_residual<T: Scalar>(traj: &Trajectory<T>, zeta: &TestFunction<T>) -> Result<(T, T)> {
    let law = traj.law();
    let ghosts = traj.ghosts();
    let t0 = traj.start_time();
    let span = traj.final_time() - t0;
    let pi = T::c(std::f64::consts::PI);
    let eta = |t: T| {
        let s = (pi * (t - t0) / span).sin();
        s * s
    };
    let deta = |t: T| {
        let a = pi * (t - t0) / span;
        pi / span * (a + a).sin()
    };
    let mut cont = Vec::new();
    let mut momentum = Vec::new();
    for (k, step) in traj.steps().iter().enumerate() {
        let base = &traj.states()[k];
        // the step force acts at the new positions
        let pressure_term = if law.is_pressureless() {
            T::zero()
        } else {
            let d = crate::state::reconstruct_density(&traj.states()[k + 1], ghosts)?;
            compensated_sum(
                d.cell_edges
                    .windows(2)
                    .zip(&d.cell_densities)
                    .map(|(e, &r)| law.pressure(r) * (zeta.eval(e[1]) - zeta.eval(e[0]))),
            )
        };
        let tk = traj.node_time(k);
        let tau = traj.tau();
        for &(node, weight) in &GAUSS5 {
            let s = T::c(node);
            let t = tk + s * tau;
            let wq = T::c(weight) * tau;
            let r = T::one() - s;
            let m = base.masses();
            let (mut c_terms, mut m_terms) = (Vec::with_capacity(2 * m.len()), Vec::with_capacity(2 * m.len()));
            for i in 0..m.len() {
                let x = r * base.positions()[i] + s * step.positions[i];
                let w = r * base.velocities()[i] + s * step.w[i];
                let (z, dz) = (zeta.eval(x), zeta.derivative(x));
                c_terms.push(deta(t) * m[i] * z);
                c_terms.push(eta(t) * m[i] * dz * w);
                m_terms.push(deta(t) * m[i] * w * z);
                m_terms.push(eta(t) * m[i] * w * w * dz);
            }
            cont.push(wq * compensated_sum(c_terms));
            momentum.push(wq * (compensated_sum(m_terms) + eta(t) * pressure_term));
        }
    }
    Ok((compensated_sum(cont).abs(), compensated_sum(momentum).abs()))
}

/// Total defects of the two interpolant families at one time, measured
/// against the barycentric coarse field of the piecewise-linear sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefectOrdering<T> {
    pub eps_total: T,
    pub nu_total: T,
}

pub fn defect_ordering<T: Scalar>(
    eps: &InterpolantSample<T>,
    nu: &InterpolantSample<T>,
    law: &GasLaw<T>,
    ghosts: GhostCells,
    n_cells: usize,
) -> Result<DefectOrdering<T>> {
    let field = coarse_grain(nu, law, ghosts, n_cells)?;
    let resolved = field.resolved_energy(law);
    let e = total_energy_with(&eps.state, law, ghosts).total;
    let n = total_energy_with(&nu.state, law, ghosts).total;
    Ok(DefectOrdering { eps_total: e - resolved, nu_total: n - resolved })
}

/// Default coarse resolution `⌈√n⌉`.
pub fn default_cells(n_particles: usize) -> usize {
    (n_particles as f64).sqrt().ceil().max(1.0) as usize
}

/// Diagnostics sampled along a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSeries {
    pub times: Vec<f64>,
    #[serde(rename = "E")]
    pub e: Vec<f64>,
    #[serde(rename = "N")]
    pub n: Vec<f64>,
    pub a: Vec<f64>,
    pub f: Vec<f64>,
    pub defect_q_total: Vec<f64>,
    pub defect_phi_total: Vec<f64>,
    pub virial_residual: Vec<f64>,
    #[serde(rename = "M2")]
    pub m2: Vec<f64>,
}

const COLUMNS: [&str; 9] = ["t", "E", "N", "a", "f", "defect_Q_total", "defect_phi_total", "virial_residual", "M2"];

struct Row {
    t: f64,
    e: f64,
    n: f64,
    a: f64,
    q: f64,
    phi: f64,
    virial: f64,
    m2: f64,
}

impl DiagnosticSeries {
    /// Samples `samples_per_step` times per step, in parallel.
    pub fn compute<T: Scalar>(traj: &Trajectory<T>, samples_per_step: usize, n_cells: usize) -> Result<Self> {
        let law = *traj.law();
        let ghosts = traj.ghosts();
        let times = traj.sample_times(samples_per_step);
        let rows: Vec<Result<Row>> = times
            .par_iter()
            .map(|&t| {
                let eps = traj.sample(t, InterpolantKind::PiecewiseConstant)?;
                let nu = traj.sample(t, InterpolantKind::PiecewiseLinear)?;
                let e = total_energy_with(&eps.state, &law, ghosts).total;
                let n = total_energy_with(&nu.state, &law, ghosts).total;
                let a = acceleration(&eps, &nu, &law, ghosts);
                let field = coarse_grain(&eps, &law, ghosts, n_cells)?;
                let d = defects(&field, &law)?;
                let virial = virial_residual(traj, t).map(|v| v.f64()).unwrap_or(f64::NAN);
                Ok(Row {
                    t: t.f64(),
                    e: e.f64(),
                    n: n.f64(),
                    a: a.f64(),
                    q: d.q_total().f64(),
                    phi: d.phi_total().f64(),
                    virial,
                    m2: second_moment(&nu.state).f64(),
                })
            })
            .collect();
        let mut out = DiagnosticSeries::default();
        for row in rows {
            let r = row?;
            out.times.push(r.t);
            out.e.push(r.e);
            out.n.push(r.n);
            out.a.push(r.a);
            out.f.push(r.e);
            out.defect_q_total.push(r.q);
            out.defect_phi_total.push(r.phi);
            out.virial_residual.push(r.virial);
            out.m2.push(r.m2);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(COLUMNS)?;
        for i in 0..self.len() {
            let row = [
                self.times[i],
                self.e[i],
                self.n[i],
                self.a[i],
                self.f[i],
                self.defect_q_total[i],
                self.defect_phi_total[i],
                self.virial_residual[i],
                self.m2[i],
            ];
            wtr.write_record(row.iter().map(|v| fmt17(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().map(str::trim).ne(COLUMNS.iter().copied()) {
            return domain(format!("diagnostics header must be {}", COLUMNS.join(",")));
        }
        let mut out = DiagnosticSeries::default();
        for rec in rdr.records() {
            let rec = rec?;
            let mut vals = [0.0; 9];
            for (k, v) in vals.iter_mut().enumerate() {
                let s = rec.get(k).unwrap_or("").trim();
                *v = s.parse().map_err(|_| Error::Domain(format!("cannot parse `{s}` in diagnostics")))?;
            }
            out.times.push(vals[0]);
            out.e.push(vals[1]);
            out.n.push(vals[2]);
            out.a.push(vals[3]);
            out.f.push(vals[4]);
            out.defect_q_total.push(vals[5]);
            out.defect_phi_total.push(vals[6]);
            out.virial_residual.push(vals[7]);
            out.m2.push(vals[8]);
        }
        Ok(out)
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepper::SolverOptions;
    use crate::trajectory::march;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(x: Vec<f64>, m: Vec<f64>, v: Vec<f64>) -> InterpolantSample<f64> {
        InterpolantSample {
            time: 0.0,
            kind: InterpolantKind::PiecewiseConstant,
            state: ParticleState::new(x, m, v, 0.0).unwrap(),
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> InterpolantSample<f64> {
        let mut x = 0.0;
        let mut xs = Vec::new();
        for _ in 0..n {
            x += rng.gen_range(0.05..1.0);
            xs.push(x);
        }
        let m = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let v = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        sample(xs, m, v)
    }

    #[test]
    fn two_particle_single_cell() {
        let s = sample(vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, -1.0]);
        let law = GasLaw::new(1.0, 2.0).unwrap();
        let f = coarse_grain(&s, &law, GhostCells::Disabled, 1).unwrap();
        assert_relative_eq!(f.rbar[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(f.ubar[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(f.second_moment_flux[0], 1.0, epsilon = 1e-15);
        let d = defects(&f, &law).unwrap();
        assert_relative_eq!(d.q[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(d.phi[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_moving_gas_acceleration() {
        // unit density on [0, 1] with unit velocity; ghost halves cost 1/(2n)
        let law = GasLaw::new(1.0, 2.0).unwrap();
        for n in [4, 64, 1024] {
            let x = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
            let s = sample(x, vec![1.0; n], vec![1.0; n]);
            let a = acceleration(&s, &s, &law, GhostCells::Enabled);
            assert_relative_eq!(a, 2.0 - 0.5 / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_splits_into_resolved_and_defect_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for gamma in [1.4, 2.0, 3.0] {
            let law = GasLaw::new(0.7, gamma).unwrap();
            for n in [2, 5, 40] {
                let s = random_state(&mut rng, n);
                let e = total_energy_with(&s.state, &law, GhostCells::Enabled).total;
                for cells in [1, 3, n + 1, 4 * n] {
                    let f = coarse_grain(&s, &law, GhostCells::Enabled, cells).unwrap();
                    assert_relative_eq!(f.mass(), s.state.total_mass(), max_relative = 1e-12);
                    let d = defects(&f, &law).unwrap();
                    assert!(d.q.iter().chain(&d.phi).all(|&g| g >= 0.0));
                    assert_relative_eq!(f.resolved_energy(&law) + d.energy(&law), e, max_relative = 1e-11);
                }
            }
        }
    }

    #[test]
    fn window_drops_outside_mass() {
        let s = sample(vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4], vec![0.0; 4]);
        let law = GasLaw::new(1.0, 2.0).unwrap();
        let f = coarse_grain_window(&s.state, &law, GhostCells::Enabled, 0.5, 2.5, 4).unwrap();
        assert_relative_eq!(f.mass(), 0.5, epsilon = 1e-14);
        assert!(f.rbar.iter().all(|&r| (r - 0.25).abs() < 1e-14));
    }

    #[test]
    fn relative_energy_vanishes_on_matching_reference() {
        let s = sample(vec![0.0, 1.0, 2.0, 3.0], vec![2.0; 4], vec![0.5; 4]);
        let law = GasLaw::new(1.0, 1.4).unwrap();
        let f = coarse_grain_window(&s.state, &law, GhostCells::Enabled, 0.0, 3.0, 3).unwrap();
        let d = defects(&f, &law).unwrap();
        // masses are normalised, so the interior density is 1/4
        let re = relative_energy(&f, &d, &law, &|_x: f64| (0.25, 0.5)).unwrap();
        assert!(re.abs() < 1e-13, "{re}");
        let re = relative_energy(&f, &d, &law, &|_x: f64| (1.0, 1.5)).unwrap();
        let r = 0.25f64;
        let expected = 3.0 * (0.5 * r + (r.powf(1.4) - 1.0 - 1.4 * (r - 1.0)));
        assert_relative_eq!(re, expected, max_relative = 1e-13);
        assert!(relative_energy(&f, &d, &law, &|_x: f64| (0.0, 0.0)).is_err());
    }

    #[test]
    fn relative_energy_adds_defect_energy() {
        let s = sample(vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, -1.0]);
        let law = GasLaw::new(1.0, 2.0).unwrap();
        let f = coarse_grain(&s, &law, GhostCells::Disabled, 1).unwrap();
        let d = defects(&f, &law).unwrap();
        let re = relative_energy(&f, &d, &law, &|_x: f64| (1.0, 0.0)).unwrap();
        assert_relative_eq!(re, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ordering_on_free_transport_is_trivial() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let s = ParticleState::new(x, vec![1.0; 10], vec![0.3; 10], 0.0).unwrap();
        let law = GasLaw::pressureless(2.0).unwrap();
        let traj = march(s, law, 0.1, 0.5, &SolverOptions::default()).unwrap();
        let eps = traj.sample(0.23, InterpolantKind::PiecewiseConstant).unwrap();
        let nu = traj.sample(0.23, InterpolantKind::PiecewiseLinear).unwrap();
        let o = defect_ordering(&eps, &nu, &law, GhostCells::Enabled, 11).unwrap();
        assert!(o.eps_total.abs() < 1e-12 && o.nu_total.abs() < 1e-12);
        for t in [0.15, 0.2, 0.31] {
            assert!(virial_residual(&traj, t).unwrap().abs() < 1e-12);
        }
        assert!(virial_residual(&traj, 0.05).is_err());
        let (c, m) = weak_form_residual(&traj, &TestFunction::Bump { center: 4.6, radius: 2.0 }).unwrap();
        assert!(c < 1e-12 && m < 1e-12, "{c} {m}");
    }

    #[test]
    fn series_round_trips_through_csv() {
        let law = GasLaw::new(1.0, 2.0).unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 4.0).collect();
        let v: Vec<f64> = x.iter().map(|&x| -x).collect();
        let s = ParticleState::new(x, vec![0.25; 12], v, 0.0).unwrap();
        let traj = march(s, law, 0.05, 0.3, &SolverOptions::default()).unwrap();
        let series = DiagnosticSeries::compute(&traj, 4, default_cells(12)).unwrap();
        assert_eq!(series.len(), 6 * 4 + 1);
        assert!(series.virial_residual[0].is_nan());
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let back = DiagnosticSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times, series.times);
        assert_eq!(back.e, series.e);
        assert_eq!(back.m2, series.m2);
        for (n, e) in back.n.iter().zip(&back.e) {
            assert!(n <= &(e + 1e-12));
        }
    }

    #[test]
    fn works_in_single_precision() {
        let law = GasLaw::new(1.0f32, 2.0).unwrap();
        let s = InterpolantSample {
            time: 0.0f32,
            kind: InterpolantKind::PiecewiseLinear,
            state: ParticleState::new(vec![0.0f32, 0.5, 1.5], vec![1.0; 3], vec![0.0, 1.0, -1.0], 0.0).unwrap(),
        };
        let f = coarse_grain(&s, &law, GhostCells::Enabled, 2).unwrap();
        let d = defects(&f, &law).unwrap();
        let e = total_energy_with(&s.state, &law, GhostCells::Enabled).total;
        assert!((f.resolved_energy(&law) + d.energy(&law) - e).abs() < 1e-5);
    }
}
