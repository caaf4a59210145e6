use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("size cap exceeded: {what} = {value} > {cap}")]
    CapExceeded {
        what: &'static str,
        value: u64,
        cap: u64,
    },
    #[error("incompatible geometry: {0}")]
    Geometry(String),
    #[error("no admissible block side for torus side {side} and ell = {ell}")]
    NoAdmissibleBlockSide { side: usize, ell: f64 },
    #[error("boundary condition {bc} is not valid on this geometry: {reason}")]
    BoundaryMismatch { bc: String, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("fit refused: {0}")]
    Fit(String),
    #[error("budget too small: {0}")]
    Budget(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidInput(msg.into())
}
