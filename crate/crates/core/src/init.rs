//! Initial data: particles placed at the quantiles of a density profile.
//!
//! Densities are given up to normalization; particle masses are `1/n` and
//! particle `i` sits at `F^{-1}((i - 1/2)/n)` for the normalized CDF `F`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;
use crate::state::{reconstruct_density, GhostCells, ParticleState};

/// Shape of a smooth compactly supported density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Uniform,
    /// `cos²(π (x - c)/(b - a))` on `[a, b]`.
    CosineBump,
}

impl Profile {
    /// Unnormalized density on `[a, b]`.
    pub fn eval(&self, x: f64, a: f64, b: f64) -> f64 {
        if x < a || x > b {
            return 0.0;
        }
        match self {
            Profile::Uniform => 1.0,
            Profile::CosineBump => {
                let c = 0.5 * (a + b);
                let s = (std::f64::consts::PI * (x - c) / (b - a)).cos();
                s * s
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Two constant states separated at `interface`.
    Riemann {
        x_min: f64,
        x_max: f64,
        interface: f64,
        left_density: f64,
        right_density: f64,
        left_velocity: f64,
        right_velocity: f64,
    },
    /// Gaussian truncated at four standard deviations, velocity `drift + slope (x - center)`.
    GaussianBlob {
        center: f64,
        sigma: f64,
        #[serde(default)]
        drift: f64,
        #[serde(default)]
        slope: f64,
    },
    /// Two truncated Gaussians moving with their own drifts.
    TwoBlob {
        centers: [f64; 2],
        sigmas: [f64; 2],
        #[serde(default = "equal_weights")]
        weights: [f64; 2],
        #[serde(default)]
        drifts: [f64; 2],
    },
    /// Profile on `[x_min, x_max]` with affine velocity `velocity + slope x`.
    Block {
        x_min: f64,
        x_max: f64,
        profile: Profile,
        #[serde(default)]
        velocity: f64,
        #[serde(default)]
        slope: f64,
    },
    /// Particles read from an `x,m,v` file, resampled when the count differs.
    CustomCsv { path: PathBuf },
}

fn equal_weights() -> [f64; 2] {
    [0.5, 0.5]
}

const TRUNCATION: f64 = 4.0;
const GRID: usize = 20_000;

fn gaussian(x: f64, c: f64, s: f64) -> f64 {
    if (x - c).abs() > TRUNCATION * s {
        return 0.0;
    }
    (-0.5 * ((x - c) / s).powi(2)).exp()
}

/// Quantiles of a piecewise-linear CDF through `(grid[j], cdf[j])`.
fn invert_cdf(grid: &[f64], cdf: &[f64], n: usize) -> Vec<f64> {
    let total = *cdf.last().expect("nonempty grid");
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let q = (i as f64 + 0.5) / n as f64 * total;
        while j + 1 < cdf.len() - 1 && cdf[j + 1] < q {
            j += 1;
        }
        let (c0, c1) = (cdf[j], cdf[j + 1]);
        let frac = if c1 > c0 { (q - c0) / (c1 - c0) } else { 0.5 };
        out.push(grid[j] + frac.clamp(0.0, 1.0) * (grid[j + 1] - grid[j]));
    }
    out
}

/// Quantile particles of an unnormalized density sampled on `[a, b]`.
pub fn quantile_positions(density: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if !(b > a) || n == 0 {
        return domain("quantile placement needs a < b and n >= 1");
    }
    let h = (b - a) / GRID as f64;
    let grid: Vec<f64> = (0..=GRID).map(|j| a + h * j as f64).collect();
    let mut cdf = Vec::with_capacity(GRID + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for j in 0..GRID {
        // Simpson on each grid cell
        let (x0, x1) = (grid[j], grid[j + 1]);
        let mid = 0.5 * (x0 + x1);
        let cell = h / 6.0 * (density(x0) + 4.0 * density(mid) + density(x1));
        if !(cell >= 0.0) {
            return domain("density must be nonnegative");
        }
        acc += cell;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return domain("density has zero mass");
    }
    Ok(invert_cdf(&grid, &cdf, n))
}

/// Quantiles of a piecewise-constant density with `edges.len() = values.len() + 1`.
fn piecewise_constant_quantiles(edges: &[f64], values: &[f64], n: usize) -> Vec<f64> {
    let mut cdf = vec![0.0];
    for (j, &v) in values.iter().enumerate() {
        let last = *cdf.last().unwrap();
        cdf.push(last + v * (edges[j + 1] - edges[j]));
    }
    invert_cdf(edges, &cdf, n)
}

impl InitialCondition {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                domain(format!("{name} must be > 0, got {v}"))
            }
        };
        match self {
            InitialCondition::Riemann { x_min, x_max, interface, left_density, right_density, .. } => {
                if !(x_min < interface && interface < x_max) {
                    return domain("riemann data needs x_min < interface < x_max");
                }
                positive("left_density", *left_density)?;
                positive("right_density", *right_density)
            }
            InitialCondition::GaussianBlob { sigma, .. } => positive("sigma", *sigma),
            InitialCondition::TwoBlob { sigmas, weights, .. } => {
                positive("sigmas[0]", sigmas[0])?;
                positive("sigmas[1]", sigmas[1])?;
                positive("weights[0]", weights[0])?;
                positive("weights[1]", weights[1])
            }
            InitialCondition::Block { x_min, x_max, .. } => {
                if x_min < x_max {
                    Ok(())
                } else {
                    domain("block needs x_min < x_max")
                }
            }
            InitialCondition::CustomCsv { .. } => Ok(()),
        }
    }

    /// Particle state with `n` equal-mass particles at time 0.
    pub fn particles<T: Scalar>(&self, n: usize) -> Result<ParticleState<T>> {
        self.validate()?;
        if n == 0 {
            return domain("n_particles must be >= 1");
        }
        let (x, v): (Vec<f64>, Vec<f64>) = match self {
            InitialCondition::Riemann {
                x_min,
                x_max,
                interface,
                left_density,
                right_density,
                left_velocity,
                right_velocity,
            } => {
                let x = piecewise_constant_quantiles(&[*x_min, *interface, *x_max], &[*left_density, *right_density], n);
                let v = x.iter().map(|&p| if p < *interface { *left_velocity } else { *right_velocity }).collect();
                (x, v)
            }
            InitialCondition::GaussianBlob { center, sigma, drift, slope } => {
                let r = TRUNCATION * sigma;
                let x = quantile_positions(|p| gaussian(p, *center, *sigma), center - r, center + r, n)?;
                let v = x.iter().map(|&p| drift + slope * (p - center)).collect();
                (x, v)
            }
            InitialCondition::TwoBlob { centers, sigmas, weights, drifts } => {
                let comp = |k: usize, p: f64| weights[k] * gaussian(p, centers[k], sigmas[k]) / sigmas[k];
                let a = (centers[0] - TRUNCATION * sigmas[0]).min(centers[1] - TRUNCATION * sigmas[1]);
                let b = (centers[0] + TRUNCATION * sigmas[0]).max(centers[1] + TRUNCATION * sigmas[1]);
                let x = quantile_positions(|p| comp(0, p) + comp(1, p), a, b, n)?;
                let v = x
                    .iter()
                    .map(|&p| {
                        let (r0, r1) = (comp(0, p), comp(1, p));
                        if r0 + r1 > 0.0 {
                            (r0 * drifts[0] + r1 * drifts[1]) / (r0 + r1)
                        } else {
                            0.5 * (drifts[0] + drifts[1])
                        }
                    })
                    .collect();
                (x, v)
            }
            InitialCondition::Block { x_min, x_max, profile, velocity, slope } => {
                let x = match profile {
                    Profile::Uniform => piecewise_constant_quantiles(&[*x_min, *x_max], &[1.0], n),
                    _ => quantile_positions(|p| profile.eval(p, *x_min, *x_max), *x_min, *x_max, n)?,
                };
                let v = x.iter().map(|&p| velocity + slope * p).collect();
                (x, v)
            }
            InitialCondition::CustomCsv { path } => {
                let file = std::fs::File::open(path)?;
                let state = ParticleState::<f64>::read_csv(file, 0.0)?;
                let state = if state.len() == n || state.len() < 2 { state } else { resample(&state, n)? };
                let x = state.positions().iter().map(|v| T::c(*v)).collect();
                let m = state.masses().iter().map(|v| T::c(*v)).collect();
                let v = state.velocities().iter().map(|v| T::c(*v)).collect();
                return ParticleState::new(x, m, v, T::zero());
            }
        };
        let x = x.into_iter().map(T::c).collect();
        let v = v.into_iter().map(T::c).collect();
        ParticleState::uniform_masses(x, v, T::zero())
    }
}

/// Unnormalized density and velocity fields on their support `[lo, hi]`.
pub struct Fields {
    pub lo: f64,
    pub hi: f64,
    pub density: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub velocity: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl InitialCondition {
    /// The continuum data behind [`InitialCondition::particles`].
    pub fn fields(&self) -> Result<Fields> {
        self.validate()?;
        Ok(match self.clone() {
            InitialCondition::Riemann {
                x_min,
                x_max,
                interface,
                left_density,
                right_density,
                left_velocity,
                right_velocity,
            } => Fields {
                lo: x_min,
                hi: x_max,
                density: Box::new(move |x| {
                    if x < x_min || x > x_max {
                        0.0
                    } else if x < interface {
                        left_density
                    } else {
                        right_density
                    }
                }),
                velocity: Box::new(move |x| if x < interface { left_velocity } else { right_velocity }),
            },
            InitialCondition::GaussianBlob { center, sigma, drift, slope } => Fields {
                lo: center - TRUNCATION * sigma,
                hi: center + TRUNCATION * sigma,
                density: Box::new(move |x| gaussian(x, center, sigma)),
                velocity: Box::new(move |x| drift + slope * (x - center)),
            },
            InitialCondition::TwoBlob { centers, sigmas, weights, drifts } => {
                let comp = move |k: usize, p: f64| weights[k] * gaussian(p, centers[k], sigmas[k]) / sigmas[k];
                Fields {
                    lo: (centers[0] - TRUNCATION * sigmas[0]).min(centers[1] - TRUNCATION * sigmas[1]),
                    hi: (centers[0] + TRUNCATION * sigmas[0]).max(centers[1] + TRUNCATION * sigmas[1]),
                    density: Box::new(move |p| comp(0, p) + comp(1, p)),
                    velocity: Box::new(move |p| {
                        let (r0, r1) = (comp(0, p), comp(1, p));
                        if r0 + r1 > 0.0 {
                            (r0 * drifts[0] + r1 * drifts[1]) / (r0 + r1)
                        } else {
                            0.5 * (drifts[0] + drifts[1])
                        }
                    }),
                }
            }
            InitialCondition::Block { x_min, x_max, profile, velocity, slope } => Fields {
                lo: x_min,
                hi: x_max,
                density: Box::new(move |x| profile.eval(x, x_min, x_max)),
                velocity: Box::new(move |x| velocity + slope * x),
            },
            InitialCondition::CustomCsv { path } => {
                let state = ParticleState::<f64>::read_csv(std::fs::File::open(path)?, 0.0)?;
                let d = reconstruct_density(&state, GhostCells::Enabled)?;
                let (edges, dens) = (d.cell_edges, d.cell_densities);
                let (xs, vs) = (state.positions().to_vec(), state.velocities().to_vec());
                Fields {
                    lo: edges[0],
                    hi: edges[edges.len() - 1],
                    density: Box::new(move |x| {
                        let k = edges.partition_point(|&e| e <= x);
                        if k == 0 || k == edges.len() {
                            0.0
                        } else {
                            dens[k - 1]
                        }
                    }),
                    velocity: Box::new(move |x| {
                        let k = xs.partition_point(|&p| p <= x);
                        if k == 0 {
                            vs[0]
                        } else if k == xs.len() {
                            vs[xs.len() - 1]
                        } else {
                            let s = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                            (1.0 - s) * vs[k - 1] + s * vs[k]
                        }
                    }),
                }
            }
        })
    }
}

/// Equal-mass particles at the quantiles of the reconstruction of `state`;
/// velocities are interpolated linearly between the original particles.
pub fn resample(state: &ParticleState<f64>, n: usize) -> Result<ParticleState<f64>> {
    let d = reconstruct_density(state, GhostCells::Enabled)?;
    let x = piecewise_constant_quantiles(&d.cell_edges, &d.cell_densities, n);
    let xs = state.positions();
    let vs = state.velocities();
    let v = x
        .iter()
        .map(|&p| {
            let j = xs.partition_point(|&q| q <= p);
            if j == 0 {
                vs[0]
            } else if j == xs.len() {
                vs[xs.len() - 1]
            } else {
                let f = (p - xs[j - 1]) / (xs[j] - xs[j - 1]);
                vs[j - 1] + f * (vs[j] - vs[j - 1])
            }
        })
        .collect();
    ParticleState::uniform_masses(x, v, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riemann_places_two_thirds_on_the_left() {
        let ic = InitialCondition::Riemann {
            x_min: -1.0,
            x_max: 1.0,
            interface: 0.0,
            left_density: 2.0,
            right_density: 1.0,
            left_velocity: 0.0,
            right_velocity: 0.0,
        };
        let s = ic.particles::<f64>(30).unwrap();
        let left = s.positions().iter().filter(|&&x| x < 0.0).count();
        assert_eq!(left, 20);
        // left spacing is half of the right spacing
        let dl = s.positions()[1] - s.positions()[0];
        let dr = s.positions()[29] - s.positions()[28];
        assert!((dr / dl - 2.0).abs() < 1e-9);
        assert!((s.positions()[0] - (-1.0 + 0.5 * dl)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_blob_is_symmetric() {
        let ic = InitialCondition::GaussianBlob { center: 0.5, sigma: 0.2, drift: 1.0, slope: -1.0 };
        let s = ic.particles::<f64>(64).unwrap();
        for i in 0..32 {
            assert!((s.positions()[i] - 0.5 + s.positions()[63 - i] - 0.5).abs() < 1e-9);
        }
        assert!((s.velocities()[0] - (1.0 - (s.positions()[0] - 0.5))).abs() < 1e-12);
        // median spacing near the center is the smallest
        assert!(s.positions()[32] - s.positions()[31] < s.positions()[1] - s.positions()[0]);
    }

    #[test]
    fn two_blob_uses_component_drifts() {
        let ic = InitialCondition::TwoBlob {
            centers: [-1.0, 1.0],
            sigmas: [0.2, 0.2],
            weights: [0.5, 0.5],
            drifts: [1.0, -1.0],
        };
        let s = ic.particles::<f64>(40).unwrap();
        assert!((s.velocities()[0] - 1.0).abs() < 1e-9);
        assert!((s.velocities()[39] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_block_is_evenly_spaced() {
        let ic = InitialCondition::Block { x_min: 0.0, x_max: 1.0, profile: Profile::Uniform, velocity: 0.5, slope: 0.0 };
        let s = ic.particles::<f64>(4).unwrap();
        assert_eq!(s.positions(), &[0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn resampling_preserves_uniform_data() {
        let ic = InitialCondition::Block { x_min: 0.0, x_max: 1.0, profile: Profile::Uniform, velocity: 0.0, slope: 1.0 };
        let s = ic.particles::<f64>(10).unwrap();
        let r = resample(&s, 20).unwrap();
        assert_eq!(r.len(), 20);
        // the ghost cells hold half density, so the first quantile sits at 0
        assert!(r.positions()[0].abs() < 1e-12);
        assert!((r.positions()[10] - r.positions()[9] - 0.05).abs() < 1e-12);
        for (x, v) in r.positions().iter().zip(r.velocities()) {
            assert!((x - v).abs() < 0.05 + 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let ic = InitialCondition::GaussianBlob { center: 0.0, sigma: -1.0, drift: 0.0, slope: 0.0 };
        assert!(ic.particles::<f64>(8).is_err());
    }
}
