use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Core(#[from] tdmf_core::Error),
    #[error("{failed} of {total} sweep points failed")]
    PartialSweep { failed: usize, total: usize },
}

#[derive(Serialize)]
struct Report<'a> {
    kind: &'a str,
    exit_code: i32,
    messages: Vec<String>,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(tdmf_core::Error::Numerical(_)) => 3,
            CliError::Core(_) => 2,
            CliError::PartialSweep { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(tdmf_core::Error::Numerical(_)) => "numerical",
            CliError::Core(tdmf_core::Error::Io(_)) => "io",
            CliError::Core(_) => "config",
            CliError::PartialSweep { .. } => "partial_sweep",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let messages = match self {
            CliError::Config(m) => m.clone(),
            other => vec![other.to_string()],
        };
        serde_json::to_string(&Report { kind: self.kind(), exit_code: self.exit_code(), messages })
            .expect("error report serializes")
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(tdmf_core::Error::Io(e))
    }
}
