use thiserror::Error;

#[derive(Debug, Error)]
pub enum HomogError {
    /// Bad configuration file or inconsistent model parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A function was called with arguments violating its contract.
    #[error("argument error: {0}")]
    Argument(String),

    /// Numerical failure during a solve (NaN, CFL violation, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HomogError {
    /// Process exit code for the CLI: 2 for config problems, 3 for runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            HomogError::Config(_) | HomogError::Argument(_) => 2,
            _ => 3,
        }
    }
}
