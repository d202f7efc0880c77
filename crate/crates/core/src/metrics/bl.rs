use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::lp::{LinearProgram, Relation};
use super::AtomicMeasure;
use crate::error::Result;
use crate::scalar::{compensated_sum, Scalar};

/// An optimal test function for the bounded-Lipschitz dual problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlCertificate<T> {
    /// Values of the test function at the support points.
    pub test_values: Vec<T>,
    pub lip_part: T,
    pub sup_part: T,
}

impl<T: Scalar> BlCertificate<T> {
    fn trivial() -> Self {
        Self { test_values: Vec::new(), lip_part: T::zero(), sup_part: T::zero() }
    }

    /// `Σ ζ(x_i) w_i`.
    pub fn value(&self, mu: &AtomicMeasure<T>) -> T {
        compensated_sum(self.test_values.iter().zip(mu.weights()).map(|(&z, &w)| z * w))
    }

    /// Checks the sup, Lipschitz and budget constraints up to `tol`.
    pub fn is_feasible(&self, support: &[T], tol: T) -> bool {
        if self.test_values.len() != support.len() {
            return false;
        }
        let budget = self.sup_part + self.lip_part <= T::one() + tol;
        let signs = self.sup_part >= -tol && self.lip_part >= -tol;
        let sup = self.test_values.iter().all(|z| z.abs() <= self.sup_part + tol);
        let lip = self
            .test_values
            .windows(2)
            .zip(support.windows(2))
            .all(|(z, x)| (z[1] - z[0]).abs() <= self.lip_part * (x[1] - x[0]) + tol);
        budget && signs && sup && lip
    }
}

/// Concave piecewise-linear function on `[lo, lo + Σ len]`.
struct Concave<T> {
    lo: T,
    value_at_lo: T,
    /// `(length, slope)` with slopes decreasing.
    segs: VecDeque<(T, T)>,
}

impl<T: Scalar> Concave<T> {
    fn argmax(&self) -> (T, T) {
        let (mut z, mut v) = (self.lo, self.value_at_lo);
        for &(len, slope) in &self.segs {
            if slope <= T::zero() {
                break;
            }
            z = z + len;
            v = v + slope * len;
        }
        (z, v)
    }

    fn add_linear(&mut self, w: T) {
        self.value_at_lo = self.value_at_lo + w * self.lo;
        self.segs.iter_mut().for_each(|s| s.1 = s.1 + w);
    }

    /// `z ↦ max_{|y - z| ≤ δ} f(y)` on the enlarged domain.
    fn window_max(&mut self, delta: T) {
        let mut out = VecDeque::with_capacity(self.segs.len() + 1);
        let mut flat = delta + delta;
        let mut rest = VecDeque::new();
        for &(len, slope) in &self.segs {
            if slope > T::zero() {
                out.push_back((len, slope));
            } else if slope == T::zero() {
                flat = flat + len;
            } else {
                rest.push_back((len, slope));
            }
        }
        if flat > T::zero() {
            out.push_back((flat, T::zero()));
        }
        out.extend(rest);
        self.segs = out;
        self.lo = self.lo - delta;
    }

    fn clip_left(&mut self, mut amount: T) {
        self.lo = self.lo + amount;
        while amount > T::zero() {
            let Some(front) = self.segs.front_mut() else { break };
            let take = front.0.min(amount);
            self.value_at_lo = self.value_at_lo + front.1 * take;
            front.0 = front.0 - take;
            amount = amount - take;
            if front.0 <= T::zero() {
                self.segs.pop_front();
            }
        }
    }

    fn clip_right(&mut self, mut amount: T) {
        while amount > T::zero() {
            let Some(back) = self.segs.back_mut() else { break };
            let take = back.0.min(amount);
            back.0 = back.0 - take;
            amount = amount - take;
            if back.0 <= T::zero() {
                self.segs.pop_back();
            }
        }
    }
}

/// Best test function for a fixed split between Lipschitz and sup budget.
fn solve_split<T: Scalar>(x: &[T], w: &[T], lip: T) -> (T, Vec<T>) {
    let n = x.len();
    let sup = T::one() - lip;
    let mut f = Concave { lo: -sup, value_at_lo: -sup * w[0], segs: VecDeque::new() };
    if sup > T::zero() {
        f.segs.push_back((sup + sup, w[0]));
    }
    let mut peaks = Vec::with_capacity(n);
    peaks.push(f.argmax().0);
    for i in 1..n {
        let delta = lip * (x[i] - x[i - 1]);
        f.window_max(delta);
        f.clip_left(delta);
        f.clip_right(delta);
        f.add_linear(w[i]);
        peaks.push(f.argmax().0);
    }
    let mut zeta = vec![T::zero(); n];
    zeta[n - 1] = peaks[n - 1].max(-sup).min(sup);
    for i in (0..n - 1).rev() {
        let delta = lip * (x[i + 1] - x[i]);
        zeta[i] = peaks[i].max(zeta[i + 1] - delta).min(zeta[i + 1] + delta).max(-sup).min(sup);
    }
    let value = compensated_sum(zeta.iter().zip(w).map(|(&z, &wi)| z * wi));
    (value, zeta)
}

/// Bounded-Lipschitz norm `sup { Σ ζ(x_i) w_i : ‖ζ‖∞ + Lip(ζ) ≤ 1 }`.
///
/// For a fixed split `s + t = 1` the inner problem is solved exactly by a
/// dynamic program over concave piecewise-linear value functions. The optimal
/// value is concave in `s`, which is then found by golden-section search.
/// Only consecutive Lipschitz constraints are imposed: a function on sorted
/// points extends piecewise linearly to the line with the same constant.
pub fn bl_norm<T: Scalar>(mu: &AtomicMeasure<T>) -> (T, BlCertificate<T>) {
    if mu.is_empty() || mu.weights().iter().all(|w| *w == T::zero()) {
        return (T::zero(), BlCertificate { test_values: vec![T::zero(); mu.len()], ..BlCertificate::trivial() });
    }
    let (x, w) = (mu.support(), mu.weights());
    let eval = |s: T| {
        let (v, z) = solve_split(x, w, s);
        (v, z, s)
    };
    let mut best = eval(T::zero());
    let consider = |cand: (T, Vec<T>, T), best: &mut (T, Vec<T>, T)| {
        if cand.0 > best.0 {
            *best = cand;
        }
    };
    consider(eval(T::one()), &mut best);
    let phi = T::c(0.5 * (5f64.sqrt() - 1.0));
    let (mut a, mut b) = (T::zero(), T::one());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    let stop = T::epsilon() * T::c(4.0);
    for _ in 0..200 {
        if b - a <= stop {
            break;
        }
        if fc.0 >= fd.0 {
            b = d;
            d = c;
            consider(fd, &mut best);
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            consider(fc, &mut best);
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d);
        }
    }
    consider(fc, &mut best);
    consider(fd, &mut best);
    let (value, test_values, lip) = best;
    (value, BlCertificate { test_values, lip_part: lip, sup_part: T::one() - lip })
}

/// Which Lipschitz constraints [`bl_norm_lp`] imposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LipschitzConstraints {
    Consecutive,
    AllPairs,
}

/// The bounded-Lipschitz norm as an explicit linear program.
pub fn bl_norm_lp<T: Scalar>(mu: &AtomicMeasure<T>, pairs: LipschitzConstraints) -> Result<(T, BlCertificate<T>)> {
    let n = mu.len();
    if n == 0 {
        return Ok((T::zero(), BlCertificate::trivial()));
    }
    // variables: p_0..p_n, q_0..q_n (ζ = p - q), s, t
    let (s, t) = (2 * n, 2 * n + 1);
    let mut obj = vec![T::zero(); 2 * n + 2];
    for (i, &w) in mu.weights().iter().enumerate() {
        obj[i] = w;
        obj[n + i] = -w;
    }
    let one = T::one();
    let mut lp = LinearProgram::maximize(obj);
    for i in 0..n {
        lp.constraint_sparse(&[(i, one), (n + i, -one), (t, -one)], Relation::Le, T::zero());
        lp.constraint_sparse(&[(i, -one), (n + i, one), (t, -one)], Relation::Le, T::zero());
    }
    let x = mu.support();
    for i in 0..n {
        let partners: Vec<usize> = match pairs {
            LipschitzConstraints::Consecutive => (i + 1..n.min(i + 2)).collect(),
            LipschitzConstraints::AllPairs => (i + 1..n).collect(),
        };
        for j in partners {
            let d = x[j] - x[i];
            lp.constraint_sparse(&[(j, one), (n + j, -one), (i, -one), (n + i, one), (s, -d)], Relation::Le, T::zero());
            lp.constraint_sparse(&[(j, -one), (n + j, one), (i, one), (n + i, -one), (s, -d)], Relation::Le, T::zero());
        }
    }
    lp.constraint_sparse(&[(s, one), (t, one)], Relation::Le, one);
    let sol = lp.solve()?;
    let test_values = (0..n).map(|i| sol.x[i] - sol.x[n + i]).collect();
    Ok((sol.value, BlCertificate { test_values, lip_part: sol.x[s], sup_part: sol.x[t] }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_signed(max: usize) -> impl Strategy<Value = AtomicMeasure<f64>> {
        (1..=max).prop_flat_map(|n| {
            (prop::collection::vec(-4.0..4.0f64, n), prop::collection::vec(-1.0..1.0f64, n))
                .prop_map(|(x, w)| AtomicMeasure::from_atoms(&x, &w).unwrap())
        })
    }

    #[test]
    fn dirac_has_norm_one() {
        let (v, cert) = bl_norm(&AtomicMeasure::<f64>::dirac(2.5));
        assert!((v - 1.0).abs() < 1e-12);
        assert!(cert.is_feasible(&[2.5], 1e-12));
    }

    #[test]
    fn dipole_closed_form() {
        for &h in &[0.01f64, 0.3, 1.0, 2.0, 5.0] {
            let mu = AtomicMeasure::<f64>::new(vec![0.0, h], vec![1.0, -1.0]).unwrap();
            let (v, cert) = bl_norm(&mu);
            let exact = 2.0 * h / (2.0 + h);
            assert!((v - exact).abs() < 1e-12, "h={h}: {v} vs {exact}");
            assert!(cert.is_feasible(mu.support(), 1e-9));
            let (lp, _) = bl_norm_lp(&mu, LipschitzConstraints::AllPairs).unwrap();
            assert!((lp - exact).abs() < 1e-9);
        }
        let mu = AtomicMeasure::<f64>::new(vec![0.0, 2.0], vec![1.0, -1.0]).unwrap();
        assert!((bl_norm(&mu).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_measure() {
        assert_eq!(bl_norm(&AtomicMeasure::<f64>::zero()).0, 0.0);
        let z = AtomicMeasure::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(bl_norm(&z).0, 0.0);
    }

    #[test]
    fn larger_instance_matches_lp() {
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.05).collect();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect();
        let mu = AtomicMeasure::from_atoms(&x, &w).unwrap();
        let (v, cert) = bl_norm(&mu);
        let (lp, _) = bl_norm_lp(&mu, LipschitzConstraints::Consecutive).unwrap();
        assert!((v - lp).abs() < 1e-9, "{v} vs {lp}");
        assert!(cert.is_feasible(mu.support(), 1e-9));
        assert!((cert.value(&mu) - v).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_lp_and_all_pairs(mu in arb_signed(6)) {
            let (v, cert) = bl_norm(&mu);
            let (cons, _) = bl_norm_lp(&mu, LipschitzConstraints::Consecutive).unwrap();
            let (all, _) = bl_norm_lp(&mu, LipschitzConstraints::AllPairs).unwrap();
            prop_assert!((v - cons).abs() < 1e-9, "dp {} lp {}", v, cons);
            prop_assert!((cons - all).abs() < 1e-9);
            prop_assert!(cert.is_feasible(mu.support(), 1e-9));
            prop_assert!((cert.value(&mu) - v).abs() < 1e-9);
        }

        #[test]
        fn bounded_by_total_variation(mu in arb_signed(30)) {
            prop_assert!(bl_norm(&mu).0 <= mu.total_variation() + 1e-12);
        }

        #[test]
        fn homogeneous(mu in arb_signed(20), c in -3.0..3.0f64) {
            let a = bl_norm(&mu.scaled(c)).0;
            let b = c.abs() * bl_norm(&mu).0;
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }
    }
}
