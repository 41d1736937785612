use thiserror::Error;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("grid resolution {grid} is below the mode count {modes} on axis {axis}")]
    ResolutionMismatch {
        axis: usize,
        grid: usize,
        modes: usize,
    },

    #[error("fields live on different domains")]
    DomainMismatch,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel has divergent tail: {0}")]
    DivergentTail(String),

    #[error("kernel certification failed: {0}")]
    CertificationFailed(String),

    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("dissipation conditions violated: {0}")]
    DissipationViolated(String),

    #[error("history/kernel discretizations are incompatible: {0}")]
    IncompatibleHistory(String),

    #[error("time step {dt} exceeds smallest history node spacing {spacing}")]
    CflViolation { dt: f64, spacing: f64 },

    #[error("stored trajectory does not cover the requested time {0}")]
    TrajectoryGap(f64),

    #[error("inner linear solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("fixed-point iteration on the inertia coefficient did not converge after {iterations} iterations")]
    InnerIterationDiverged { iterations: usize },

    #[error("Newton iteration stagnated with residual {residual:.3e}")]
    NewtonStagnation { residual: f64 },

    #[error("series too short for decay fit: {0} samples")]
    SeriesTooShort(usize),

    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
