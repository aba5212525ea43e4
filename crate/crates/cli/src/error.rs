use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("config schema: {0}")]
    Schema(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] mfe_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } | CliError::Schema(_) => "config",
            CliError::Io(_) | CliError::Core(mfe_core::Error::Io(_)) => "io",
            CliError::Core(mfe_core::Error::InvalidParam { .. }) => "config",
            CliError::Core(mfe_core::Error::Trace(_)) => "input",
            CliError::Core(_) => "solver",
        }
    }

    /// `{"error": {"kind", "message", "field"?}}` for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let field = match self {
            CliError::Config { field, .. } => Some(field.clone()),
            CliError::Core(mfe_core::Error::InvalidParam { field, .. }) => Some(field.to_string()),
            _ => None,
        };
        json!({ "error": { "kind": self.kind(), "message": self.to_string(), "field": field } })
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "io" | "input" => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
