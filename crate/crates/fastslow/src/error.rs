//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Generator matrix fails a structural requirement (shape, signs, row sums).
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    /// Generator is valid but its transition graph is not irreducible.
    #[error("generator is not irreducible: {0}")]
    Irreducibility(String),

    /// Empty or inverted time span.
    #[error("invalid time span: [{t0}, {t_end}]")]
    InvalidSpan { t0: f64, t_end: f64 },

    /// Nonpositive or non-finite step size.
    #[error("invalid step size: {0}")]
    InvalidStep(f64),

    /// Model definition violates a precondition (dimensions, positivity, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// State left the finite range during integration.
    #[error("trajectory blew up at t = {time}{}", match replicate {
        Some(k) => format!(" (replicate {k})"),
        None => String::new(),
    })]
    Blowup { time: f64, replicate: Option<usize> },

    /// Scaling schedule violates its case's monotonicity requirements.
    #[error("invalid scaling schedule: {0}")]
    InvalidSchedule(String),

    /// Exit-time budget does not fit on the step grid.
    #[error("exit-time budget {budget} overflows the step grid at dt = {dt}")]
    InvalidBudget { budget: f64, dt: f64 },

    /// No periodic orbit found within the allotted integration time.
    #[error("no cycle detected within {max_time} time units ({returns} section returns seen)")]
    NoCycle { max_time: f64, returns: usize },

    /// Trajectory ran into an attracting equilibrium instead of a cycle.
    #[error("flow converges to an equilibrium near ({})", location.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))]
    ConvergesToEquilibrium { location: Vec<f64> },

    /// Trajectory is malformed for the requested operation.
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    /// Histogram grid is malformed.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// More than the tolerated fraction of mass fell outside the grid.
    #[error("grid covers too little of the trajectory: {:.3}% of mass fell outside", overflow_fraction * 100.0)]
    GridCoverage { overflow_fraction: f64 },

    /// Two measures live on different grids.
    #[error("grid specs differ: {0}")]
    SpecMismatch(String),

    /// Generic precondition violation on operation inputs.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
