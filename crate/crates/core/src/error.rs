use thiserror::Error;

/// Errors produced by model construction, estimation and the oracles.
#[derive(Debug, Error)]
pub enum PbdwError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ellipticity violated: sum of |c_j| = {sum} >= min a0 = {a0_min}")]
    EllipticityViolated { sum: f64, a0_min: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("parameter coordinate {index} = {value} lies outside [-1, 1]")]
    OutsideParameterBox { index: usize, value: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid sensor {index}: {reason}")]
    InvalidSensor { index: usize, reason: String },

    #[error("sensor {index} is numerically dependent on the preceding sensors")]
    RankDeficientSensors { index: usize },

    #[error("recovery map undefined: beta = {beta:e} (reduced space meets the orthogonal complement of W)")]
    MapUndefined { beta: f64 },

    #[error("every candidate space has infinite mu")]
    NoFiniteMu,

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PbdwError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(PbdwError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
