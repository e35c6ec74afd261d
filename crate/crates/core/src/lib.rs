//! Real-time dynamic spectrum management for multi-user multi-carrier
//! interference channels.
//!
//! The numerical modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the common double precision case.

pub mod baselines;
pub mod dov;
pub mod harness;
pub mod ipdb;
pub mod model;
pub mod procedures;
pub mod scalar;
pub mod scenarios;
pub mod trace;

pub use dov::{DovCoefficients, DovKind, DovTransform};
pub use ipdb::{SolverConfig, SolverError, SolverState};
pub use model::{ConstraintMode, Scenario, TransmitSpectra};
pub use scalar::Real;
pub use trace::RunTrace;

pub type Scenario64 = Scenario<f64>;
pub type Scenario32 = Scenario<f32>;
pub type Spectra64 = TransmitSpectra<f64>;
pub type Spectra32 = TransmitSpectra<f32>;
pub type Transform64 = DovTransform<f64>;
pub type Transform32 = DovTransform<f32>;
