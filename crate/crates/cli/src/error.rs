use std::path::Path;

/// Failure of a CLI command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Io { .. } => "io",
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind(), "code": self.exit_code(), "message": self.to_string() }
        })
        .to_string()
    }

    /// Wraps a core error with a short context prefix.
    pub fn core(context: &str, e: spectral_q_core::Error) -> Self {
        let msg = format!("{context}: {e}");
        if e.is_numeric() {
            CliError::Numeric(msg)
        } else {
            CliError::Data(msg)
        }
    }

    pub(crate) fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { context: format!("cannot write {}", path.display()), source }
    }
}

impl From<spectral_q_core::Error> for CliError {
    fn from(e: spectral_q_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}
