//! Distances between atomic measures on the line.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::{compensated_sum, Scalar};
use crate::state::fmt17;

mod bl;
pub mod lp;
mod wasserstein;

pub use bl::{bl_norm, bl_norm_lp, BlCertificate, LipschitzConstraints};
pub use wasserstein::{wasserstein_coupling_lp, wasserstein_p};

/// Finitely many weighted atoms on a strictly increasing support.
///
/// Weights may be signed; the Wasserstein distance additionally requires a
/// probability measure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure<T> {
    support: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> AtomicMeasure<T> {
    pub fn new(support: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if support.len() != weights.len() {
            return domain(format!("{} support points but {} weights", support.len(), weights.len()));
        }
        if support.iter().chain(&weights).any(|v| !v.is_finite()) {
            return domain("measure atoms must be finite");
        }
        if let Some(i) = support.windows(2).position(|w| !(w[0] < w[1])) {
            return domain(format!("support must be strictly increasing (index {i})"));
        }
        Ok(Self { support, weights })
    }

    /// Sorts the atoms and merges coincident points.
    pub fn from_atoms(points: &[T], weights: &[T]) -> Result<Self> {
        if points.len() != weights.len() {
            return domain(format!("{} points but {} weights", points.len(), weights.len()));
        }
        let mut atoms: Vec<(T, T)> = points.iter().copied().zip(weights.iter().copied()).collect();
        if atoms.iter().any(|(x, w)| !x.is_finite() || !w.is_finite()) {
            return domain("measure atoms must be finite");
        }
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        let mut support: Vec<T> = Vec::with_capacity(atoms.len());
        let mut merged: Vec<T> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            if support.last() == Some(&x) {
                let last = merged.last_mut().expect("nonempty");
                *last = *last + w;
            } else {
                support.push(x);
                merged.push(w);
            }
        }
        Ok(Self { support, weights: merged })
    }

    pub fn dirac(x: T) -> Self {
        Self { support: vec![x], weights: vec![T::one()] }
    }

    pub fn zero() -> Self {
        Self { support: Vec::new(), weights: Vec::new() }
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn total_weight(&self) -> T {
        compensated_sum(self.weights.iter().copied())
    }

    pub fn total_variation(&self) -> T {
        compensated_sum(self.weights.iter().map(|w| w.abs()))
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { support: self.support.clone(), weights: self.weights.iter().map(|&w| w * c).collect() }
    }

    pub fn translated(&self, shift: T) -> Self {
        Self { support: self.support.iter().map(|&x| x + shift).collect(), weights: self.weights.clone() }
    }

    /// Signed difference `self - other` on the merged support.
    pub fn difference(&self, other: &Self) -> Self {
        let (a, b) = (self, other);
        let mut support = Vec::with_capacity(a.len() + b.len());
        let mut weights = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let take_a = j == b.len() || (i < a.len() && a.support[i] <= b.support[j]);
            let take_b = i == a.len() || (j < b.len() && b.support[j] <= a.support[i]);
            let x = if take_a { a.support[i] } else { b.support[j] };
            let mut w = T::zero();
            if take_a {
                w = w + a.weights[i];
                i += 1;
            }
            if take_b {
                w = w - b.weights[j];
                j += 1;
            }
            support.push(x);
            weights.push(w);
        }
        Self { support, weights }
    }

    /// Nonnegative weights summing to one within `tol`.
    pub fn check_probability(&self, tol: T) -> Result<()> {
        if self.is_empty() {
            return domain("probability measure has no atoms");
        }
        if let Some(i) = self.weights.iter().position(|&w| w < -tol) {
            return domain(format!("negative weight {} at atom {i}", self.weights[i]));
        }
        let total = self.total_weight();
        if (total - T::one()).abs() > tol {
            return domain(format!("weights sum to {total}, not 1"));
        }
        Ok(())
    }

    /// Reads an `x,w` CSV; rows may be unsorted.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Domain(format!("measure CSV is missing column `{name}`")))
        };
        let (ix, iw) = (col("x")?, col("w")?);
        let (mut xs, mut ws) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            for (i, out) in [(ix, &mut xs), (iw, &mut ws)] {
                let s = rec.get(i).unwrap_or("").trim();
                let v: f64 = s.parse().map_err(|_| Error::Domain(format!("cannot parse `{s}` as a number")))?;
                out.push(T::c(v));
            }
        }
        Self::from_atoms(&xs, &ws)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "w"])?;
        for (x, m) in self.support.iter().zip(&self.weights) {
            wtr.write_record([fmt17(*x), fmt17(*m)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Metric used to measure time regularity of a curve of measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveMetric {
    W2,
    #[serde(rename = "BL")]
    Bl,
}

impl<T: Scalar> AtomicMeasure<T> {
    pub fn distance(&self, other: &Self, metric: CurveMetric) -> Result<T> {
        match metric {
            CurveMetric::W2 => wasserstein_p(self, other, 2),
            CurveMetric::Bl => Ok(bl_norm(&self.difference(other)).0),
        }
    }
}

/// Largest difference quotient over consecutive samples; a lower bound for
/// the Lipschitz seminorm of the sampled curve.
pub fn curve_lipschitz_estimate<T: Scalar>(samples: &[(T, AtomicMeasure<T>)], metric: CurveMetric) -> Result<T> {
    if samples.len() < 2 {
        return domain("a Lipschitz estimate needs at least two samples");
    }
    let mut best = T::zero();
    for pair in samples.windows(2) {
        let dt = pair[1].0 - pair[0].0;
        if !(dt > T::zero()) {
            return domain("sample times must be strictly increasing");
        }
        best = best.max(pair[0].1.distance(&pair[1].1, metric)? / dt);
    }
    Ok(best)
}
