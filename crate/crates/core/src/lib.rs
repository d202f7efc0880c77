//! Variational particle scheme for one-dimensional isentropic gas dynamics,
//! with diagnostics for dissipative limits and minimal-acceleration selection.

pub mod diagnostics;
pub mod error;
pub mod gas;
pub mod init;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod scalar;
pub mod selection;
pub mod state;
pub mod stepper;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases for the common case.
pub type State = state::ParticleState<f64>;
pub type Law = gas::GasLaw<f64>;
pub type Run = trajectory::Trajectory<f64>;
pub type Measure = metrics::AtomicMeasure<f64>;
