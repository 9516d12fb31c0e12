//! Nonlinear Gaussian tracking filters with cross-sensor transfer of
//! predicted observations.
//!
//! A pair of sensors tracks the same maneuvering object; the primary
//! sensor suffers a higher measurement-noise intensity than the source
//! sensor. Instead of sharing raw data, the source filter ships the mean
//! and covariance of its one-step-ahead predicted observation, and the
//! primary filter conditions on that packet as an extra likelihood
//! before its own measurement update. The moment-matching engine is
//! rule-agnostic: the unscented transform and the third- and
//! fifth-degree cubature rules plug into the same predict / update /
//! predict-observation cycle.
//!
//! Modules:
//! - [`gaussian`]: belief types and PSD-safe covariance operations
//! - [`models`]: coordinated-turn process, range-bearing sensor
//! - [`sigma`]: point-set rules and the stability measure `sum |W_j|`
//! - [`engine`]: rule-agnostic filter steps
//! - [`btl`]: paired source/primary filters with the one-step packet delay
//! - [`fusion`]: measurement-vector-fusion baseline
//! - [`harness`]: seeded Monte Carlo benchmark with common random numbers

pub mod btl;
pub mod engine;
pub mod error;
pub mod fusion;
pub mod gaussian;
pub mod harness;
pub mod models;
#[cfg(any(test, feature = "test-oracles"))]
pub mod oracle;
pub mod sigma;

pub use error::{Error, Result};
pub use gaussian::{CovMatrix, GaussianBelief, MeasVec, Stage, StateVec};
pub use sigma::{RuleKind, RuleSpec, WeightedPointSet};
