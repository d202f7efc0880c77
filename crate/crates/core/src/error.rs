use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two particles are closer than the degeneracy threshold.
    #[error("degenerate state: particles {left} and {right} are {gap:e} apart (threshold {threshold:e})")]
    Degenerate {
        left: usize,
        right: usize,
        gap: f64,
        threshold: f64,
    },

    /// The step optimizer did not reach the requested tolerance.
    #[error("solver did not converge after {iterations} iterations (gradient residual {residual:e})")]
    Solver {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    /// A failure inside step `index` of a trajectory.
    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// A computed quantity violated an identity it must satisfy.
    #[error("internal consistency: {0}")]
    Consistency(String),

    /// Several ensemble members failed.
    #[error("{} ensemble member(s) failed: {}", failures.len(), failures.join("; "))]
    PartialEnsemble { failures: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
