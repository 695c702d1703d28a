use std::path::PathBuf;

use trialcmdp::cmdp::SolveFailure;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Solve(#[from] SolveFailure),
    #[error(transparent)]
    Core(#[from] trialcmdp::Error),
    #[error("{0} self-test check(s) failed")]
    SelfTest(usize),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad input, 3 for infeasible problems, 4 for numerical
    /// failures and 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use trialcmdp::Error as E;
        match self {
            CliError::Config { .. } | CliError::UnknownExperiment(_) | CliError::Format { .. } => 2,
            CliError::Solve(f) if f.is_infeasible() => 3,
            CliError::Core(E::Infeasible | E::RepairFailed(_)) => 3,
            CliError::Core(
                E::InvalidParameter(_) | E::HorizonMismatch { .. } | E::InvalidState(_),
            ) => 2,
            CliError::Solve(SolveFailure::Error(
                E::InvalidParameter(_) | E::HorizonMismatch { .. },
            )) => 2,
            CliError::Solve(_) | CliError::Core(_) | CliError::SelfTest(_) => 4,
            CliError::Io { .. } | CliError::Csv(_) | CliError::Json(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
