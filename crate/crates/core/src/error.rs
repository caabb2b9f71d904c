use thiserror::Error;

use crate::backend::BackendError;
use crate::scene::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the engine's operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("language model output could not be parsed after {attempts} attempts: {reason}")]
    MalformedLlmOutput { attempts: usize, reason: String },

    #[error("description is empty")]
    EmptyDescription,

    #[error("action not supported: {0}")]
    UnsupportedAction(String),

    #[error("judge verdict could not be parsed: {0:?}")]
    UnparseableVerdict(String),

    #[error("unparseable placement proposal: {0}")]
    UnparseableLlmOutput(String),

    #[error("scene description failed validation: {0:?}")]
    ValidationFailed(Vec<Violation>),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no geometry registered for {0}")]
    MissingGeometry(String),

    #[error("job {0} not found")]
    JobNotFound(String),

    #[error("subtask {0} not found")]
    SubtaskNotFound(String),

    #[error("no pending candidate for subtask {0}")]
    NoPendingCandidate(String),

    #[error("iteration budget exhausted for subtask {0}")]
    IterationBudgetExhausted(String),

    #[error("job is in state {0:?}, which does not allow this action")]
    InvalidState(crate::orchestrator::JobStatus),

    #[error("artifact {0} missing from store")]
    MissingArtifact(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
