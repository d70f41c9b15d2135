use fedtd_core::Error as CoreError;

/// Harness failures, each tied to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("all seeds diverged: {0}")]
    AllDiverged(String),
    #[error("instability: {0}")]
    Unstable(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Spec(_) => 1,
            HarnessError::Generation(_) => 2,
            HarnessError::AllDiverged(_) => 3,
            HarnessError::Unstable(_) => 4,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Generation { .. } => HarnessError::Generation(e.to_string()),
            CoreError::Unstable { .. } => HarnessError::Unstable(e.to_string()),
            CoreError::Diverged { .. } => HarnessError::AllDiverged(e.to_string()),
            _ => HarnessError::Spec(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Spec(format!("io: {e}"))
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Spec(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Spec(format!("json: {e}"))
    }
}
