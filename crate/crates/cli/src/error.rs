use logsym_core::data::IngestError;
use logsym_core::diagnostics::DiagnosticsError;
use logsym_core::fit::FitError;
use logsym_core::poisson::PoissonError;
use logsym_core::synthetic::TruthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, spec, or arguments.
    #[error("{0}")]
    Input(String),
    /// Fitting or simulation failed numerically.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TruthError> for CliError {
    fn from(e: TruthError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Evaluation(_) | FitError::Selection(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<PoissonError> for CliError {
    fn from(e: PoissonError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::NotConverged
            | DiagnosticsError::Envelope { .. }
            | DiagnosticsError::UndefinedCorrelation(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}
