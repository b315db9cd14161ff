use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// The cache cannot be paired with the workload (e.g. `m >= n`) or a
    /// device ends up with zero pages.
    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("list index {index} out of range 0..={max}")]
    ListIndex { index: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver did not converge after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A transient trajectory left the probability simplex by more than
    /// round-off, which means the configuration is not a valid chain.
    #[error("trajectory left [0,1] at slot {slot}: x[{page}][{list}] = {value}")]
    Diverged {
        slot: usize,
        page: usize,
        list: usize,
        value: f64,
    },

    #[error("state space has {cardinality} states, above the cap of {cap}")]
    StateSpaceTooLarge { cardinality: u128, cap: u128 },

    #[error("config error: {0}")]
    Config(String),

    /// A failure inside one point of an experiment sweep.
    #[error("at point {point}: {source}")]
    AtPoint {
        point: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the command-line tool: 2 for configuration
    /// errors, 3 for solver failures, 4 for infeasible geometry.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::AtPoint { source, .. } => source.exit_code(),
            Error::InvalidGeometry(_) | Error::Infeasible(_) => 4,
            Error::NoConvergence { .. }
            | Error::Diverged { .. }
            | Error::ListIndex { .. }
            | Error::DimensionMismatch { .. } => 3,
            Error::InvalidWorkload(_)
            | Error::InvalidArgument(_)
            | Error::StateSpaceTooLarge { .. }
            | Error::Config(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
        }
    }
}
