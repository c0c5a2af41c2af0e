use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// An iterative scalar solver hit its cap.
    #[error("solver did not converge: {0}")]
    Solver(String),

    /// A moment required by a formula is infinite.
    #[error("moment condition violated: {moment} is infinite")]
    MomentCondition { moment: &'static str },

    #[error("non-finite integrand value {value} at delta = {delta}")]
    NonFinite { delta: f64, value: f64 },

    #[error("integration did not reach tolerance {tol:e} (last change {change:e})")]
    Integration { tol: f64, change: f64 },

    /// An order parameter left its admissible range during an update.
    #[error("iteration guard: {0}")]
    Guard(String),

    #[error("fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Fit {
        iterations: usize,
        grad_norm: f64,
        best: Box<crate::erm::Estimator>,
    },
}
