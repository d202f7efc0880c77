//! Dense two-phase simplex for small linear programs.
//!
//! Variables are nonnegative. Pivoting follows Bland's rule, so the method
//! terminates on degenerate problems, which the transport and dual-norm
//! programs are.

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `maximize c·x` subject to the rows and `x >= 0`.
#[derive(Clone, Debug)]
pub struct LinearProgram<T> {
    objective: Vec<T>,
    rows: Vec<(Vec<T>, Relation, T)>,
}

#[derive(Clone, Debug)]
pub struct LpSolution<T> {
    pub value: T,
    pub x: Vec<T>,
}

impl<T: Scalar> LinearProgram<T> {
    pub fn maximize(objective: Vec<T>) -> Self {
        Self { objective, rows: Vec::new() }
    }

    pub fn minimize(objective: Vec<T>) -> Self {
        Self { objective: objective.into_iter().map(|c| -c).collect(), rows: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constraint(&mut self, coeffs: Vec<T>, rel: Relation, rhs: T) -> &mut Self {
        assert_eq!(coeffs.len(), self.objective.len(), "row length must match the variable count");
        self.rows.push((coeffs, rel, rhs));
        self
    }

    /// Sparse form of [`LinearProgram::constraint`].
    pub fn constraint_sparse(&mut self, entries: &[(usize, T)], rel: Relation, rhs: T) -> &mut Self {
        let mut row = vec![T::zero(); self.objective.len()];
        for &(j, v) in entries {
            row[j] = row[j] + v;
        }
        self.constraint(row, rel, rhs)
    }

    /// Solves the program. For a program built with [`LinearProgram::minimize`]
    /// the reported value is the maximum of the negated objective.
    pub fn solve(&self) -> Result<LpSolution<T>> {
        let n = self.objective.len();
        let m = self.rows.len();
        let tol = T::tol(1e-11);

        let n_slack = self.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = self
            .rows
            .iter()
            .filter(|(_, rel, b)| {
                let flipped = *b < T::zero();
                match rel {
                    Relation::Eq => true,
                    Relation::Le => flipped,
                    Relation::Ge => !flipped,
                }
            })
            .count();
        let cols = n + n_slack + n_art;
        let mut tab = Tableau { a: vec![vec![T::zero(); cols]; m], b: vec![T::zero(); m], basis: vec![0; m], tol };
        let mut artificial = vec![false; cols];
        let (mut next_slack, mut next_art) = (n, n + n_slack);
        for (i, (coeffs, rel, rhs)) in self.rows.iter().enumerate() {
            let sign = if *rhs < T::zero() { -T::one() } else { T::one() };
            for j in 0..n {
                tab.a[i][j] = sign * coeffs[j];
            }
            tab.b[i] = sign * *rhs;
            let rel = match (rel, sign < T::zero()) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => *r,
            };
            match rel {
                Relation::Le => {
                    tab.a[i][next_slack] = T::one();
                    tab.basis[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    tab.a[i][next_slack] = -T::one();
                    next_slack += 1;
                    tab.a[i][next_art] = T::one();
                    artificial[next_art] = true;
                    tab.basis[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    tab.a[i][next_art] = T::one();
                    artificial[next_art] = true;
                    tab.basis[i] = next_art;
                    next_art += 1;
                }
            }
        }

        let max_iters = 50 * (m + cols) + 1000;
        if n_art > 0 {
            let cost: Vec<T> = artificial.iter().map(|&a| if a { -T::one() } else { T::zero() }).collect();
            let allowed = vec![true; cols];
            tab.optimize(&cost, &allowed, max_iters)?;
            let infeas: T = tab.basis.iter().zip(&tab.b).filter(|(&j, _)| artificial[j]).map(|(_, &b)| b).sum();
            let scale = T::one() + tab.b.iter().fold(T::zero(), |acc, b| acc.max(b.abs()));
            if infeas > tol * scale {
                return domain(format!("linear program is infeasible (phase-one residual {infeas:e})"));
            }
            // drive zero-level artificials out of the basis; drop redundant rows
            let mut i = 0;
            while i < tab.basis.len() {
                if artificial[tab.basis[i]] {
                    let pivot_col = (0..cols).find(|&j| !artificial[j] && tab.a[i][j].abs() > tol);
                    match pivot_col {
                        Some(j) => tab.pivot(i, j),
                        None => {
                            tab.a.remove(i);
                            tab.b.remove(i);
                            tab.basis.remove(i);
                            continue;
                        }
                    }
                }
                i += 1;
            }
        }

        let mut cost = vec![T::zero(); cols];
        cost[..n].copy_from_slice(&self.objective);
        let allowed: Vec<bool> = artificial.iter().map(|a| !a).collect();
        tab.optimize(&cost, &allowed, max_iters)?;

        let mut x = vec![T::zero(); n];
        for (i, &j) in tab.basis.iter().enumerate() {
            if j < n {
                x[j] = tab.b[i];
            }
        }
        let value = x.iter().zip(&self.objective).map(|(&xi, &c)| xi * c).sum();
        Ok(LpSolution { value, x })
    }
}

struct Tableau<T> {
    a: Vec<Vec<T>>,
    b: Vec<T>,
    basis: Vec<usize>,
    tol: T,
}

impl<T: Scalar> Tableau<T> {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v = *v / p;
        }
        self.b[r] = self.b[r] / p;
        let pivot_row = self.a[r].clone();
        let pivot_b = self.b[r];
        for i in 0..self.a.len() {
            if i == r {
                continue;
            }
            let f = self.a[i][c];
            if f != T::zero() {
                for (v, &pv) in self.a[i].iter_mut().zip(&pivot_row) {
                    *v = *v - f * pv;
                }
                self.b[i] = self.b[i] - f * pivot_b;
                if self.b[i] < T::zero() && self.b[i] > -self.tol {
                    self.b[i] = T::zero();
                }
            }
        }
        self.basis[r] = c;
    }

    fn optimize(&mut self, cost: &[T], allowed: &[bool], max_iters: usize) -> Result<()> {
        let cols = cost.len();
        for it in 0..max_iters {
            // reduced costs from scratch keep round-off from accumulating
            let mut reduced = cost.to_vec();
            for (i, &bj) in self.basis.iter().enumerate() {
                let cb = cost[bj];
                if cb != T::zero() {
                    for j in 0..cols {
                        reduced[j] = reduced[j] - cb * self.a[i][j];
                    }
                }
            }
            let Some(enter) = (0..cols).find(|&j| allowed[j] && reduced[j] > self.tol) else {
                return Ok(());
            };
            let mut leave: Option<(usize, T)> = None;
            for i in 0..self.a.len() {
                let aij = self.a[i][enter];
                if aij > self.tol {
                    let ratio = self.b[i] / aij;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best || (ratio == best && self.basis[i] < self.basis[k]) {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return domain("linear program is unbounded");
            };
            self.pivot(r, enter);
            if it + 1 == max_iters {
                break;
            }
        }
        Err(Error::Solver { iterations: max_iters, residual: f64::NAN, last_iterate: Vec::new() })
    }
}
