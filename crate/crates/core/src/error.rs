use thiserror::Error;

use crate::dynamics::DensityMatrix;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{quantity} = {value} outside [{min}, {max}]")]
    Range {
        quantity: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("coupling matrix is not Hermitian (residual {0:e})")]
    NonHermitian(f64),

    #[error("invalid selection rules: {0}")]
    SelectionRules(String),

    #[error("sequencing error: {0}")]
    Sequence(String),

    #[error("integration failed at t = {t:e} s: {reason}")]
    Integration {
        t: f64,
        reason: String,
        last_good: Box<DensityMatrix>,
    },

    #[error("calibration did not converge: {0}")]
    Calibration(String),

    #[error("fit did not converge: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status used by the CLI and the C API.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Range { .. }
            | Error::Domain(_)
            | Error::NonHermitian(_)
            | Error::SelectionRules(_)
            | Error::Sequence(_) => 1,
            Error::Fit(_) => 3,
            Error::Integration { .. } | Error::Calibration(_) | Error::Io(_) => 2,
        }
    }
}
