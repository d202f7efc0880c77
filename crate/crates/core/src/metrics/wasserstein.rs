use super::lp::{LinearProgram, Relation};
use super::AtomicMeasure;
use crate::error::{domain, Result};
use crate::scalar::{compensated_sum, Scalar};

/// Exact `W_p` between probability measures on the line, `p ∈ {1, 2}`.
pub fn wasserstein_p<T: Scalar>(mu: &AtomicMeasure<T>, nu: &AtomicMeasure<T>, p: u32) -> Result<T> {
    if p != 1 && p != 2 {
        return domain(format!("only p = 1 and p = 2 are supported, got {p}"));
    }
    wasserstein_general(mu, nu, T::from_usize_c(p as usize))
}

fn probability_tol<T: Scalar>() -> T {
    T::tol(1e-9)
}

/// Quantile matching: the monotone (north-west corner) coupling of sorted
/// atoms is optimal for every convex cost on the line.
pub(crate) fn wasserstein_general<T: Scalar>(mu: &AtomicMeasure<T>, nu: &AtomicMeasure<T>, p: T) -> Result<T> {
    if !(p >= T::one()) {
        return domain(format!("p must be >= 1, got {p}"));
    }
    mu.check_probability(probability_tol())?;
    nu.check_probability(probability_tol())?;
    let (x, a) = (mu.support(), mu.weights());
    let (y, b) = (nu.support(), nu.weights());
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].max(T::zero()), b[0].max(T::zero()));
    let mut terms = Vec::with_capacity(x.len() + y.len());
    // leftover mass when one list runs out is round-off
    while i < x.len() && j < y.len() {
        let t = ra.min(rb);
        terms.push(t * (x[i] - y[j]).abs().powf(p));
        ra = ra - t;
        rb = rb - t;
        if ra == T::zero() {
            i += 1;
            if i < x.len() {
                ra = a[i].max(T::zero());
            }
        }
        if rb == T::zero() {
            j += 1;
            if j < y.len() {
                rb = b[j].max(T::zero());
            }
        }
    }
    let cost = compensated_sum(terms);
    Ok(cost.max(T::zero()).powf(p.recip()))
}

/// `W_p` from the transport linear program over all couplings.
pub fn wasserstein_coupling_lp<T: Scalar>(mu: &AtomicMeasure<T>, nu: &AtomicMeasure<T>, p: T) -> Result<T> {
    mu.check_probability(probability_tol())?;
    nu.check_probability(probability_tol())?;
    let (n, m) = (mu.len(), nu.len());
    let cost: Vec<T> = (0..n * m)
        .map(|k| (mu.support()[k / m] - nu.support()[k % m]).abs().powf(p))
        .collect();
    let mut lp = LinearProgram::minimize(cost);
    for i in 0..n {
        let entries: Vec<(usize, T)> = (0..m).map(|j| (i * m + j, T::one())).collect();
        lp.constraint_sparse(&entries, Relation::Eq, mu.weights()[i]);
    }
    for j in 0..m {
        let entries: Vec<(usize, T)> = (0..n).map(|i| (i * m + j, T::one())).collect();
        lp.constraint_sparse(&entries, Relation::Eq, nu.weights()[j]);
    }
    let sol = lp.solve()?;
    Ok((-sol.value).max(T::zero()).powf(p.recip()))
}
