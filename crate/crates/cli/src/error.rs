//! Error classes and their stable process exit codes.

use metaharness::backend::BackendError;
use metaharness::controller::ControllerError;
use metaharness::diagnosis::DiagnosisError;
use metaharness::evalkit::EvalError;
use metaharness::harness::HarnessError;
use metaharness::types::ProblemSetError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Gate(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Fit(String),
}

impl CliError {
    /// 0 success, 1 usage, 2 input parse, 3 backend, 4 diagnosis gate,
    /// 5 filesystem, 6 model fitting.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Gate(_) => 4,
            CliError::Io(_) => 5,
            CliError::Fit(_) => 6,
        }
    }

    pub fn io(context: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::InvalidConfig(m) => CliError::Usage(format!("invalid backend configuration: {m}")),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Backend { .. } => CliError::Backend(e.to_string()),
            HarnessError::ElicitationExhausted { .. } | HarnessError::Elicitation(_) => {
                CliError::Backend(e.to_string())
            }
            HarnessError::InvalidConfig(_)
            | HarnessError::SignalMismatch { .. }
            | HarnessError::MissingController(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Harness(h) => h.into(),
            EvalError::Metric(_) => CliError::Fit(e.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<ControllerError> for CliError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::AllCandidatesFailed
            | ControllerError::Svm(_)
            | ControllerError::Logistic(_)
            | ControllerError::Calibration(_)
            | ControllerError::Metric(_) => CliError::Fit(e.to_string()),
            ControllerError::InvalidPStop(_) => CliError::Usage(e.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<DiagnosisError> for CliError {
    fn from(e: DiagnosisError) -> Self {
        match e {
            DiagnosisError::TooFewAnchors { .. } | DiagnosisError::DegenerateLabels => CliError::Parse(e.to_string()),
            other => CliError::Fit(other.to_string()),
        }
    }
}

impl From<ProblemSetError> for CliError {
    fn from(e: ProblemSetError) -> Self {
        match e {
            ProblemSetError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}
