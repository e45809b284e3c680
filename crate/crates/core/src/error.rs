use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum AceError {
    /// An index (prompt class, position, token) fell outside the declared shape.
    #[error("index out of range: {what} = {index} (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    /// A caller-supplied value violated an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("enumeration of {size} sequences exceeds cap of {cap}")]
    EnumerationCap { size: u128, cap: u64 },

    /// The instance has no incorrect (or no correct) outputs.
    #[error("degenerate instance: {0}")]
    Degenerate(String),

    /// Configuration key was unknown or its value failed to parse.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    /// Malformed checkpoint or dataset file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AceError>;

impl AceError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        AceError::Input(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        AceError::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
