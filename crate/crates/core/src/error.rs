use std::path::PathBuf;

/// Process exit codes shared by the CLI and anything that embeds it.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CURATION_EXCLUSIONS: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const INTERNAL: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const CURATION_GUARD: i32 = 5;
    pub const CONFIG: i32 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("curation guard: {0}")]
    CurationGuard(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Mapping used by the CLI entry point; one code per failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Io { .. } => exit::INPUT,
            Error::Config(_) => exit::CONFIG,
            Error::NonFinite { .. } | Error::Numerical(_) => exit::NUMERICAL,
            Error::CurationGuard(_) => exit::CURATION_GUARD,
            Error::Internal(_) => exit::INTERNAL,
        }
    }
}
