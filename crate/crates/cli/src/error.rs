use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stcorr::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("gradient check failed for {0} seed(s)")]
    GradCheck(usize),
}

impl CliError {
    /// Stable identifier printed in the one-line diagnostic.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "config",
            CliError::GradCheck(_) => "gradcheck",
        }
    }

    /// `error[<kind>]: <message>` with embedded newlines flattened.
    pub fn diagnostic(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.kind())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
