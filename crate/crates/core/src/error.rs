use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    /// Columns with zero population standard deviation; the SMD is undefined for them.
    #[error("zero-variance covariate(s): {}", .columns.join(", "))]
    ZeroVariance { columns: Vec<String> },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("index set is empty")]
    EmptyIndexSet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible sampling scheme: {0}")]
    Infeasible(String),

    #[error("enumeration would produce {count} splits, above the cap of {cap}; use Monte Carlo mode")]
    EnumerationCap { count: u128, cap: u128 },

    #[error("reference set is empty")]
    EmptyReference,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid maximum {grid_max} does not cover the largest SMD {required}")]
    GridCoverage { grid_max: f64, required: f64 },

    #[error("dimension mismatch: expected {expected} covariates, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("reference provenance mismatch: {0}")]
    Provenance(String),

    #[error("malformed reference file: {0}")]
    ReferenceFormat(String),
}

impl Error {
    /// True for errors caused by sizes or schemes that cannot be realised on the population.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::EnumerationCap { .. })
    }
}
