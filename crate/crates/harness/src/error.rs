use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration or arguments (exit code 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Anything that goes wrong while running (exit code 1).
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) | Self::Io(_) => 1,
        }
    }
}

impl From<oed_core::OedError> for HarnessError {
    fn from(e: oed_core::OedError) -> Self {
        match e {
            oed_core::OedError::Config(m) => Self::Config(m),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
