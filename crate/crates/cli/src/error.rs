use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("bad config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] p4dfd_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for usage and configuration mistakes, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Core(_) | Self::Io(_) | Self::Json(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
