//! Lagrangian particle states, density reconstruction, energies and moments.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gas::GasLaw;
use crate::scalar::{compensated_sum, Scalar};

/// Relative distance below which two particles count as coincident.
pub const DEFAULT_DEGENERACY_EPS: f64 = 1e-12;

/// Whether the reconstruction adds a boundary cell on each side of the hull.
///
/// A ghost cell carries the outer half mass of the boundary particle and is
/// as wide as the adjacent interior gap, so the reconstructed density has
/// total mass one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GhostCells {
    #[default]
    Enabled,
    Disabled,
}

/// Sorted particle positions carrying masses and velocities.
///
/// Masses are rescaled to sum to one on construction; the original total is
/// kept in [`ParticleState::mass_scale`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRecord<T>", into = "StateRecord<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ParticleState<T> {
    positions: Vec<T>,
    masses: Vec<T>,
    velocities: Vec<T>,
    time: T,
    mass_scale: T,
}

#[derive(Clone, Serialize, Deserialize)]
struct StateRecord<T> {
    time: T,
    positions: Vec<T>,
    masses: Vec<T>,
    velocities: Vec<T>,
}

impl<T: Scalar> TryFrom<StateRecord<T>> for ParticleState<T> {
    type Error = Error;
    fn try_from(r: StateRecord<T>) -> Result<Self> {
        ParticleState::new(r.positions, r.masses, r.velocities, r.time)
    }
}

impl<T: Scalar> From<ParticleState<T>> for StateRecord<T> {
    fn from(s: ParticleState<T>) -> Self {
        StateRecord { time: s.time, positions: s.positions, masses: s.masses, velocities: s.velocities }
    }
}

impl<T: Scalar> ParticleState<T> {
    pub fn new(positions: Vec<T>, masses: Vec<T>, velocities: Vec<T>, time: T) -> Result<Self> {
        Self::with_degeneracy_eps(positions, masses, velocities, time, T::c(DEFAULT_DEGENERACY_EPS))
    }

    pub fn with_degeneracy_eps(
        positions: Vec<T>,
        masses: Vec<T>,
        velocities: Vec<T>,
        time: T,
        degeneracy_eps: T,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return domain("a particle state needs at least one particle");
        }
        if masses.len() != n || velocities.len() != n {
            return domain(format!(
                "length mismatch: {} positions, {} masses, {} velocities",
                n,
                masses.len(),
                velocities.len()
            ));
        }
        if !time.is_finite() || time < T::zero() {
            return domain(format!("time must be finite and >= 0, got {time}"));
        }
        if let Some(i) = positions.iter().chain(&velocities).position(|v| !v.is_finite()) {
            return domain(format!("non-finite position or velocity at index {}", i % n));
        }
        if let Some(i) = masses.iter().position(|m| !m.is_finite() || *m <= T::zero()) {
            return domain(format!("mass {i} must be finite and > 0"));
        }
        check_positions(&positions, degeneracy_eps)?;
        let total = compensated_sum(masses.iter().copied());
        let masses = if (total - T::one()).abs() <= T::epsilon() {
            masses
        } else {
            masses.into_iter().map(|m| m / total).collect()
        };
        Ok(Self { positions, masses, velocities, time, mass_scale: total })
    }

    /// Equal masses `1/n`.
    pub fn uniform_masses(positions: Vec<T>, velocities: Vec<T>, time: T) -> Result<Self> {
        let n = positions.len();
        let m = T::one() / T::from_usize_c(n.max(1));
        Self::new(positions, vec![m; n], velocities, time)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn velocities(&self) -> &[T] {
        &self.velocities
    }

    pub fn time(&self) -> T {
        self.time
    }

    /// Total mass before normalization.
    pub fn mass_scale(&self) -> T {
        self.mass_scale
    }

    pub fn total_mass(&self) -> T {
        compensated_sum(self.masses.iter().copied())
    }

    /// `x_n - x_1`.
    pub fn width(&self) -> T {
        self.positions[self.len() - 1] - self.positions[0]
    }

    pub fn momentum(&self) -> T {
        compensated_sum(self.masses.iter().zip(&self.velocities).map(|(&m, &v)| m * v))
    }

    /// Same particles moved by `shift`.
    pub fn translated(&self, shift: T) -> Self {
        let mut s = self.clone();
        s.positions.iter_mut().for_each(|x| *x = *x + shift);
        s
    }

    /// Same masses with new kinematics; masses are not renormalized again.
    pub fn advanced(&self, positions: Vec<T>, velocities: Vec<T>, time: T, degeneracy_eps: T) -> Result<Self> {
        if positions.len() != self.len() || velocities.len() != self.len() {
            return domain("advanced state must keep the particle count");
        }
        check_positions(&positions, degeneracy_eps)?;
        Ok(Self {
            positions,
            masses: self.masses.clone(),
            velocities,
            time,
            mass_scale: self.mass_scale,
        })
    }

    pub fn with_time(mut self, time: T) -> Self {
        self.time = time;
        self
    }

    /// Writes `x,m,v` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "m", "v"])?;
        for i in 0..self.len() {
            wtr.write_record([
                fmt17(self.positions[i]),
                fmt17(self.masses[i]),
                fmt17(self.velocities[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads an `x,m,v` CSV. Rows may be unsorted; they are sorted by `x`.
    pub fn read_csv<R: Read>(r: R, time: T) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Domain(format!("particle CSV is missing column `{name}`")))
        };
        let (ix, im, iv) = (col("x")?, col("m")?, col("v")?);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<T> {
                let s = rec.get(i).unwrap_or("").trim();
                s.parse::<f64>()
                    .map(T::c)
                    .map_err(|_| Error::Domain(format!("cannot parse `{s}` as a number")))
            };
            rows.push((parse(ix)?, parse(im)?, parse(iv)?));
        }
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let positions = rows.iter().map(|r| r.0).collect();
        let masses = rows.iter().map(|r| r.1).collect();
        let velocities = rows.iter().map(|r| r.2).collect();
        Self::new(positions, masses, velocities, time)
    }
}

pub(crate) fn fmt17<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.f64())
}

pub(crate) fn check_positions<T: Scalar>(positions: &[T], eps: T) -> Result<()> {
    let n = positions.len();
    if n < 2 {
        return Ok(());
    }
    let width = positions[n - 1] - positions[0];
    let threshold = eps * width;
    for i in 0..n - 1 {
        let gap = positions[i + 1] - positions[i];
        if !(gap > T::zero()) || gap < threshold {
            return Err(Error::Degenerate {
                left: i,
                right: i + 1,
                gap: gap.f64(),
                threshold: threshold.f64(),
            });
        }
    }
    Ok(())
}

/// Piecewise constant density on the cells between consecutive particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapDensity<T> {
    pub cell_edges: Vec<T>,
    pub cell_densities: Vec<T>,
}

impl<T: Scalar> GapDensity<T> {
    pub fn widths(&self) -> impl Iterator<Item = T> + '_ {
        self.cell_edges.windows(2).map(|w| w[1] - w[0])
    }

    pub fn integral(&self) -> T {
        compensated_sum(self.widths().zip(&self.cell_densities).map(|(w, &r)| w * r))
    }

    /// `∫ U(r) dx`.
    pub fn internal_energy(&self, law: &GasLaw<T>) -> T {
        compensated_sum(self.widths().zip(&self.cell_densities).map(|(w, &r)| law.internal_energy(r) * w))
    }
}

/// Cell `i` between particles `i` and `i+1` carries half of each of their
/// masses. With ghost cells the two outer half masses sit in boundary cells
/// whose widths copy the neighbouring interior gap.
pub fn reconstruct_density<T: Scalar>(state: &ParticleState<T>, ghosts: GhostCells) -> Result<GapDensity<T>> {
    let n = state.len();
    if n < 2 {
        return domain("density reconstruction needs at least two particles");
    }
    let x = state.positions();
    let m = state.masses();
    let half = T::c(0.5);
    let mut edges = Vec::with_capacity(n + 2);
    let mut dens = Vec::with_capacity(n + 1);
    if ghosts == GhostCells::Enabled {
        let g = x[1] - x[0];
        edges.push(x[0] - g);
        dens.push(half * m[0] / g);
    }
    edges.extend_from_slice(x);
    for i in 0..n - 1 {
        let gap = x[i + 1] - x[i];
        if !(gap > T::zero()) {
            return Err(Error::Degenerate { left: i, right: i + 1, gap: gap.f64(), threshold: 0.0 });
        }
        dens.push(half * (m[i] + m[i + 1]) / gap);
    }
    if ghosts == GhostCells::Enabled {
        let g = x[n - 1] - x[n - 2];
        edges.push(x[n - 1] + g);
        dens.push(half * m[n - 1] / g);
    }
    Ok(GapDensity { cell_edges: edges, cell_densities: dens })
}

/// Kinetic, internal and total energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown<T> {
    pub kinetic: T,
    pub internal: T,
    pub total: T,
}

impl<T: Scalar> EnergyBreakdown<T> {
    pub fn new(kinetic: T, internal: T) -> Self {
        Self { kinetic, internal, total: kinetic + internal }
    }
}

pub fn kinetic_energy<T: Scalar>(state: &ParticleState<T>) -> T {
    let half = T::c(0.5);
    compensated_sum(state.masses().iter().zip(state.velocities()).map(|(&m, &v)| half * m * v * v))
}

/// Internal energy of the reconstructed density. A single particle of a gas
/// with pressure has infinite internal energy.
pub fn internal_energy<T: Scalar>(state: &ParticleState<T>, law: &GasLaw<T>, ghosts: GhostCells) -> T {
    if law.is_pressureless() {
        return T::zero();
    }
    match reconstruct_density(state, ghosts) {
        Ok(d) => d.internal_energy(law),
        Err(_) => T::infinity(),
    }
}

/// Energy with ghost cells enabled.
pub fn total_energy<T: Scalar>(state: &ParticleState<T>, law: &GasLaw<T>) -> EnergyBreakdown<T> {
    total_energy_with(state, law, GhostCells::Enabled)
}

pub fn total_energy_with<T: Scalar>(state: &ParticleState<T>, law: &GasLaw<T>, ghosts: GhostCells) -> EnergyBreakdown<T> {
    EnergyBreakdown::new(kinetic_energy(state), internal_energy(state, law, ghosts))
}

/// `M = (Σ m x²)^{1/2}`.
pub fn second_moment<T: Scalar>(state: &ParticleState<T>) -> T {
    compensated_sum(state.masses().iter().zip(state.positions()).map(|(&m, &x)| m * x * x)).sqrt()
}
