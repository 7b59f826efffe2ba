use thiserror::Error;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

/// A failed command. Validation failures are detected before any compute.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0:#}")]
    Validation(anyhow::Error),
    #[error("{stage} failed: {source:#}")]
    Compute {
        stage: &'static str,
        source: anyhow::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Compute { .. } => EXIT_COMPUTE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags errors as validation failures.
pub trait ValidationExt<T> {
    fn invalid(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ValidationExt<T> for Result<T, E> {
    fn invalid(self) -> CliResult<T> {
        self.map_err(|e| CliError::Validation(e.into()))
    }
}

/// Tags errors with the pipeline stage that produced them.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::Compute {
            stage,
            source: e.into(),
        })
    }
}
