use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty input")]
    EmptyInput,

    #[error("degenerate grouping feature")]
    DegenerateGrouping,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("fairness constraints infeasible; minimal feasible delta is {min_feasible_delta:.9}")]
    Infeasible { min_feasible_delta: f64 },

    #[error("internal solver error: {0}")]
    Internal(String),

    #[error("not doubly stochastic: no perfect matching on residual with mass {residual_mass:.3e}")]
    NotDoublyStochastic { residual_mass: f64 },

    #[error("unbounded propensity weight for clicked item {item}")]
    UnboundedPropensity { item: usize },

    #[error("divergence detected: {0}")]
    Divergence(String),

    #[error("stale tape: recorded at parameter version {tape}, parameters are at version {params}")]
    StaleTape { tape: u64, params: u64 },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
