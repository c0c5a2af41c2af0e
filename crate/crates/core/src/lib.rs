//! Asymptotics of empirical risk minimisation on two superstatistical
//! (Gaussian scale-mixture) data clouds.
//!
//! The crate solves the replica state-evolution equations for ridge-regularised
//! square and logistic losses, turns the order parameters into test/training
//! errors, computes the Bayes-optimal error and the linear-separability
//! threshold, and ships a finite-size simulator to check all of it.

pub mod erm;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod quadrature;
pub mod separability;
pub mod state_evolution;
pub mod variance;

pub use error::{Error, Result};
pub use loss::{LossKind, ProxResult};
pub use metrics::ErrorReport;
pub use separability::{SeparabilityConfig, SeparabilityResult};
pub use state_evolution::{
    CentroidGeometry, DeltaMethod, OrderParams, ProblemSpec, SEResult, SolverConfig,
};
pub use variance::{DeltaNodes, MomentReport, VarianceModel};
