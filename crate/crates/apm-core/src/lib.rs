//! Counterfactual cohort outcome means in short panels.
//!
//! This crate estimates cohort-level outcome means under a low-rank factor
//! model when each cohort observes only a subset of outcomes, including
//! missing-not-at-random patterns with no reference cohort. Cohort-specific
//! factor spaces are estimated spectrally, aggregated into an aggregated
//! projection matrix whose null space aligns the factors across cohorts, and
//! missing means are filled in by bridge-function extrapolation. Simultaneous
//! confidence intervals come from an exponential-weight bootstrap.
//!
//! The numerical core is generic over the scalar type ([`scalar::Scalar`],
//! satisfied by `f32` and `f64`); concrete `f64` aliases for the main types
//! are exported at the crate root.

pub mod apm;
pub mod error;
pub mod estimate;
pub mod factors;
pub mod graph;
pub mod inference;
pub mod linalg;
pub mod panel;
pub mod perturb;
pub mod scalar;
pub mod sim;
pub mod targets;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Library version embedded in CLI artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `f64` panel.
pub type Panel64 = panel::Panel<f64>;
/// `f64` cohort means.
pub type CohortMeans64 = estimate::CohortMeans<f64>;
/// `f64` factor basis.
pub type FactorBasis64 = apm::FactorBasis<f64>;
/// `f64` aggregated projection matrix.
pub type Apm64 = apm::Apm<f64>;
/// `f64` bootstrap result.
pub type BootstrapResult64 = inference::BootstrapResult<f64>;
/// `f64` simulation truth.
pub type DgpTruth64 = sim::DgpTruth<f64>;

/// `f32` panel, for callers that prefer single precision.
pub type Panel32 = panel::Panel<f32>;
