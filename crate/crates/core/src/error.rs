//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("operator is not Hermitian: {0}")]
    NotHermitian(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigenbasis labeling ambiguous: {0}")]
    LabelAmbiguity(String),

    #[error("eigenvector gauge matching failed: {0}")]
    GaugeMatching(String),

    #[error("propagation failed: {0}")]
    Propagation(String),

    #[error("trajectory not converged: {0}")]
    NotConverged(String),

    #[error("fit failed: {0}")]
    Fit(String),
}
