//! Polytropic gas law `U(r) = κ r^γ`, `P(r) = (γ-1) U(r)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Adiabatic constants of a polytropic gas.
///
/// `kappa == 0` is accepted and means a pressureless gas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasLaw<T> {
    pub kappa: T,
    pub gamma: T,
}

impl<T: Scalar> GasLaw<T> {
    pub fn new(kappa: T, gamma: T) -> Result<Self> {
        if !kappa.is_finite() || kappa < T::zero() {
            return domain(format!("kappa must be finite and >= 0 (kappa > 0, or 0 for pressureless), got {kappa}"));
        }
        if !gamma.is_finite() || gamma <= T::one() {
            return domain(format!("gamma must satisfy gamma > 1, got {gamma}"));
        }
        Ok(Self { kappa, gamma })
    }

    /// Pressureless gas with a nominal adiabatic exponent.
    pub fn pressureless(gamma: T) -> Result<Self> {
        Self::new(T::zero(), gamma)
    }

    pub fn is_pressureless(&self) -> bool {
        self.kappa == T::zero()
    }

    /// Internal energy density `U(r)`.
    #[inline]
    pub fn internal_energy(&self, r: T) -> T {
        if r <= T::zero() {
            return T::zero();
        }
        self.kappa * r.powf(self.gamma)
    }

    /// `U'(r)`.
    #[inline]
    pub fn internal_energy_derivative(&self, r: T) -> T {
        if r <= T::zero() {
            return T::zero();
        }
        self.kappa * self.gamma * r.powf(self.gamma - T::one())
    }

    /// `P(r)` without the domain check.
    #[inline]
    pub fn pressure(&self, r: T) -> T {
        (self.gamma - T::one()) * self.internal_energy(r)
    }

    /// `P'(r)`.
    #[inline]
    pub fn pressure_derivative(&self, r: T) -> T {
        (self.gamma - T::one()) * self.internal_energy_derivative(r)
    }

    /// Sound speed `sqrt(P'(r))`.
    pub fn sound_speed(&self, r: T) -> T {
        self.pressure_derivative(r).max(T::zero()).sqrt()
    }

    /// `U(r) - U(R) - U'(R)(r - R)`, evaluated without cancellation when `r ≈ R`.
    pub fn internal_energy_gap(&self, r: T, reference: T) -> T {
        self.kappa * power_gap(r, reference, self.gamma)
    }

    /// `P(r) - P(R) - P'(R)(r - R)`.
    pub fn pressure_gap(&self, r: T, reference: T) -> T {
        (self.gamma - T::one()) * self.internal_energy_gap(r, reference)
    }
}

/// Pressure `P(r) = (γ-1) κ r^γ`. Negative densities are rejected.
pub fn pressure_of<T: Scalar>(law: &GasLaw<T>, r: T) -> Result<T> {
    if r.is_nan() || r < T::zero() {
        return domain(format!("density must be >= 0, got {r}"));
    }
    Ok(law.pressure(r))
}

/// Bregman gap of `s ↦ s^γ`: `r^γ - R^γ - γ R^{γ-1} (r - R)` for `r, R >= 0`.
///
/// Uses a binomial series when `|r/R - 1|` is small so that the result keeps
/// full relative precision down to `(r - R)^2 ~ 1e-300`.
pub(crate) fn power_gap<T: Scalar>(r: T, reference: T, gamma: T) -> T {
    let r = r.max(T::zero());
    if reference <= T::zero() {
        return r.powf(gamma);
    }
    let delta = r / reference - T::one();
    let scale = reference.powf(gamma);
    if delta.abs() < T::c(2e-3) {
        // sum_{k>=2} binom(gamma, k) delta^k
        let mut coeff = gamma * (gamma - T::one()) / T::c(2.0);
        let mut term = coeff * delta * delta;
        let mut acc = term;
        for k in 3..14 {
            let kk = T::from_usize_c(k);
            coeff = coeff * (gamma - kk + T::one()) / kk;
            term = coeff * delta.powi(k as i32);
            acc = acc + term;
            if term.abs() <= acc.abs() * T::epsilon() {
                break;
            }
        }
        scale * acc.max(T::zero())
    } else {
        let g = (T::one() + delta).powf(gamma) - T::one() - gamma * delta;
        scale * g.max(T::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pressure_examples() {
        let law = GasLaw::new(1.0, 2.0).unwrap();
        assert_eq!(pressure_of(&law, 2.0).unwrap(), 4.0);
        assert_eq!(pressure_of(&law, 0.0).unwrap(), 0.0);
        let law = GasLaw::new(0.5, 1.4).unwrap();
        assert_relative_eq!(pressure_of(&law, 1.0).unwrap(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn negative_density_is_a_domain_error() {
        let law = GasLaw::new(1.0, 2.0).unwrap();
        assert!(pressure_of(&law, -1e-3).is_err());
    }

    #[test]
    fn law_validation() {
        assert!(GasLaw::new(1.0, 0.9).is_err());
        assert!(GasLaw::new(1.0, 1.0).is_err());
        assert!(GasLaw::new(-1.0, 2.0).is_err());
        assert!(GasLaw::new(0.0, 2.0).unwrap().is_pressureless());
        let msg = GasLaw::new(1.0, 0.9).unwrap_err().to_string();
        assert!(msg.contains("gamma > 1"), "{msg}");
    }

    #[test]
    fn polytropic_ratio() {
        for &gamma in &[1.1, 1.4, 2.0, 3.0] {
            let law = GasLaw::new(0.7, gamma).unwrap();
            for &r in &[1e-3, 0.5, 1.0, 7.0] {
                assert_relative_eq!(law.pressure(r) / law.internal_energy(r), gamma - 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn power_gap_matches_direct_formula_away_from_base() {
        for &gamma in &[1.4, 2.0, 3.0] {
            for &(r, rr) in &[(2.0f64, 1.0f64), (0.1, 0.3), (0.0, 1.5), (1.01, 1.0)] {
                let direct: f64 = r.powf(gamma) - rr.powf(gamma) - gamma * rr.powf(gamma - 1.0) * (r - rr);
                assert_relative_eq!(power_gap(r, rr, gamma), direct, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn power_gap_is_quadratic_near_base() {
        let gamma = 2.0;
        let d = 1e-9;
        // for gamma = 2 the gap is exactly (r - R)^2
        assert_relative_eq!(power_gap(1.0 + d, 1.0, gamma), d * d, max_relative = 1e-6);
        assert_eq!(power_gap(1.0, 1.0, 1.4_f64), 0.0);
    }

    #[test]
    fn relative_energy_example() {
        // U(2) - (U'(1)(2-1) + U(1)) = 4 - 3 = 1 for kappa = 1, gamma = 2
        let law = GasLaw::new(1.0, 2.0).unwrap();
        assert_relative_eq!(law.internal_energy_gap(2.0, 1.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn f32_law() {
        let law = GasLaw::<f32>::new(1.0, 2.0).unwrap();
        assert_eq!(pressure_of(&law, 2.0).unwrap(), 4.0);
    }
}
