use thiserror::Error;

/// Errors raised by model construction, the dual solver, and the study runner.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("belief {0} outside [0, 1]")]
    BeliefOutOfRange(f64),

    #[error("threshold is NaN")]
    NanThreshold,

    #[error("index table continuity check failed at breakpoint {breakpoint}: residual {residual:e}")]
    Continuity { breakpoint: f64, residual: f64 },

    #[error("empty cohort")]
    EmptyCohort,

    #[error("capacity {capacity} exceeds cohort size {size}")]
    CapacityExceedsCohort { capacity: usize, size: usize },

    #[error("cohort mixes discount factors ({0} vs {1})")]
    MixedDiscount(f64, f64),

    #[error("tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),

    #[error("dual bound must be positive, got {0}")]
    NonPositiveBound(f64),

    #[error("{0} must be positive")]
    NonPositiveCount(&'static str),

    #[error("initial belief vector has length {got}, cohort has {expected}")]
    InitialLength { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("no records to summarize")]
    EmptyRecords,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
