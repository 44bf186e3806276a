use thiserror::Error;
use xmodal_pref_core::data::DataError;
use xmodal_pref_core::factual::FactualError;
use xmodal_pref_core::policy::PolicyError;
use xmodal_pref_core::textmetrics::MetricError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input files or configuration.
    #[error("{0}")]
    Input(String),
    /// Training diverged.
    #[error("{0}")]
    Numerical(String),
    /// Every evaluation-service call failed.
    #[error("{0}")]
    ServiceFailure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::ServiceFailure(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FactualError> for CliError {
    fn from(e: FactualError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
