use hoicraft_core::llm::LlmError;
use hoicraft_core::recommend::RecommendError;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("project `{0}` not found")]
    NotFound(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid request body: {0}")]
    InvalidBody(String),
    #[error("design intent is empty")]
    EmptyIntent,
    #[error("part count {n} outside 1..={max}")]
    CountOutOfRange { n: usize, max: usize },
    #[error("unknown part `{0}`")]
    UnknownPart(String),
    #[error("part `{0}` is not selected")]
    NotSelected(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("workflow: {0}")]
    WorkflowGuard(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error("project document violates schema: {0}")]
    Schema(String),
    #[error("storage: {0}")]
    Storage(String),
}

/// Wire form of an error.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "NotFound",
            ServiceError::InvalidScene(_) => "InvalidScene",
            ServiceError::InvalidBody(_) => "InvalidBody",
            ServiceError::EmptyIntent => "EmptyIntent",
            ServiceError::CountOutOfRange { .. } => "CountOutOfRange",
            ServiceError::UnknownPart(_) => "UnknownPart",
            ServiceError::NotSelected(_) => "NotSelected",
            ServiceError::InvalidParam(_) => "InvalidParam",
            ServiceError::WorkflowGuard(_) => "WorkflowGuard",
            ServiceError::Simulation(_) => "SimulationError",
            ServiceError::Recommend(RecommendError::EmptyIntent) => "EmptyIntent",
            ServiceError::Recommend(RecommendError::Llm(LlmError::Unavailable { .. })) => "LLMUnavailable",
            ServiceError::Recommend(RecommendError::Llm(_)) => "LLMError",
            ServiceError::Recommend(_) => "RecommendError",
            ServiceError::Schema(_) => "SchemaViolation",
            ServiceError::Storage(_) => "StorageError",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::NotFound(_) | ServiceError::UnknownPart(_) => 404,
            ServiceError::InvalidBody(_) => 400,
            ServiceError::NotSelected(_) | ServiceError::WorkflowGuard(_) => 409,
            ServiceError::InvalidScene(_)
            | ServiceError::EmptyIntent
            | ServiceError::CountOutOfRange { .. }
            | ServiceError::InvalidParam(_)
            | ServiceError::Simulation(_) => 422,
            ServiceError::Recommend(RecommendError::Llm(LlmError::Unavailable { .. })) => 503,
            ServiceError::Recommend(RecommendError::Llm(_)) => 502,
            ServiceError::Recommend(_) => 422,
            ServiceError::Schema(_) | ServiceError::Storage(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let detail = match self {
            ServiceError::CountOutOfRange { n, max } => json!({"n": n, "max": max}),
            ServiceError::NotFound(id) => json!({"id": id}),
            ServiceError::UnknownPart(p) | ServiceError::NotSelected(p) => json!({"partId": p}),
            ServiceError::Recommend(RecommendError::Llm(e)) => match e.raw() {
                Some(raw) => json!({"raw": raw}),
                None => Value::Null,
            },
            _ => Value::Null,
        };
        ErrorBody {
            code: self.code(),
            message: self.to_string(),
            detail,
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
