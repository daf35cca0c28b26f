use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] privshield_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}, row {row}: {msg}")]
    Manifest { path: PathBuf, row: usize, msg: String },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl std::fmt::Display) -> Error {
        Error::Format { path: path.into(), msg: msg.to_string() }
    }

    /// Process exit status: 2 for configuration problems, 3 for divergence,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Core(privshield_core::Error::InvalidConfig(_)) => 2,
            Error::Core(privshield_core::Error::Diverged { .. }) => 3,
            _ => 1,
        }
    }
}
