use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("config file not found: {}", .0.display())]
    MissingConfig(PathBuf),

    #[error("missing {what}: {} (run the `{producer}` stage first or fix the path)", path.display())]
    MissingInput { what: String, path: PathBuf, producer: &'static str },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: multiid::Error,
    },

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingConfig(_) => EXIT_CONFIG,
            CliError::MissingInput { .. } => EXIT_DATA,
            CliError::Stage { source, .. } => match source {
                multiid::Error::InvalidParameter { .. } => EXIT_CONFIG,
                e if e.is_data_error() => EXIT_DATA,
                _ => EXIT_INTERNAL,
            },
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
