use std::path::PathBuf;

/// A failed command. Usage and configuration problems exit with 2, module
/// errors raised while processing exit with 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage}: missing input {}", path.display())]
    MissingInput { stage: &'static str, path: PathBuf },

    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{stage}: invalid parameter: {message}")]
    InvalidParameter { stage: &'static str, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: photogram::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Stage { .. } => 1,
            _ => 2,
        }
    }

    pub fn stage(stage: &'static str) -> impl Fn(photogram::Error) -> CliError {
        move |source| CliError::Stage { stage, source }
    }
}
