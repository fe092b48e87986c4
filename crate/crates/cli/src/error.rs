use std::path::Path;
use std::process::ExitCode;

use cuefuse_core::ingest::IngestError;
use cuefuse_core::pipeline::PipelineError;
use cuefuse_core::synth::SynthError;
use cuefuse_llm::LlmError;
use thiserror::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Backend(_) => 4,
        })
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("i/o: {}: {e}", path.display()))
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(format!("ingest: {e}"))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(m) => CliError::Config(format!("synth: {m}")),
            SynthError::Pipeline(p) => p.into(),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::BackendUnavailable(_)
            | LlmError::AuthMissing(_)
            | LlmError::UnparseableAfterRetries { .. } => CliError::Backend(e.to_string()),
            LlmError::Cache(_) => CliError::Data(format!("context-llm: {e}")),
            _ => CliError::Config(format!("context-llm: {e}")),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
