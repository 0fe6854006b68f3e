use thiserror::Error;

pub type Result<T, E = ExpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Core(#[from] rosa_core::Error),

    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExpError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        ExpError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ExpError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Config { .. } => 2,
            ExpError::Numeric(_) | ExpError::Core(_) => 3,
            ExpError::Format { .. } | ExpError::Io { .. } => 4,
        }
    }
}
