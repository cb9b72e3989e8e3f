use thiserror::Error;

use carma_credit::ats::AtsError;
use carma_credit::carma::CarmaError;
use carma_credit::credit::CreditError;
use carma_credit::dataio::DataError;
use carma_credit::inference::InferenceError;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid flags or configuration (exit code 2).
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or unusable input data (exit code 3).
    #[error("{0}")]
    Data(String),
    /// Numerical failure in simulation, pricing or fitting (exit code 4).
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn usage(field: &str, reason: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("invalid `{field}`: {reason}"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CarmaError> for CliError {
    fn from(e: CarmaError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<CreditError> for CliError {
    fn from(e: CreditError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<AtsError> for CliError {
    fn from(e: AtsError) -> Self {
        match e {
            AtsError::Unsupported(_) | AtsError::InvalidArgument(_) => {
                CliError::Usage(e.to_string())
            }
            AtsError::Singular => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
