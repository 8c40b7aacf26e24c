use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration; `key` names the offending setting.
    #[error("invalid config `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("timestep order error: {0}")]
    Order(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("benchmark error: {0}")]
    Bench(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(message: impl Into<String>) -> Self {
        Error::Dimension(message.into())
    }

    /// Process exit code for the command line: 2 for configuration errors,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            _ => 1,
        }
    }
}
