use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] splitmerge_core::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: splitmerge_core::Error,
    },

    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    pub fn at(path: impl Into<PathBuf>) -> impl FnOnce(splitmerge_core::Error) -> CliError {
        let path = path.into();
        move |source| CliError::File { path, source }
    }

    pub fn exit_code(&self) -> ExitCode {
        use splitmerge_core::Error as E;
        let core = match self {
            CliError::Core(e) | CliError::File { source: e, .. } => e.root(),
            CliError::Input(_) => return ExitCode::from(2),
            CliError::Acceptance(_) => return ExitCode::from(4),
        };
        match core {
            E::Invariant(_) => ExitCode::from(3),
            _ => ExitCode::from(2),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
