//! Context-only emotion estimates from a chat completion service.
//!
//! A text prompt describes the game and one joint outcome; the service is
//! sampled repeatedly, every answer is parsed to exactly one label, and the
//! labels are counted into a distribution. Answers are cached on disk so
//! reruns are free and reproducible. A table-driven mock stands in for the
//! service in tests and offline runs.

pub mod backend;
pub mod cache;
pub mod prompt;
pub mod query;

use thiserror::Error;

pub use backend::{Backend, CompletionRequest, LiveBackend, LiveConfig, MockBackend, MockMode, MockTable};
pub use cache::{CacheEntry, ResponseCache};
pub use prompt::{
    build_context_prompt, build_salience_vlm_prompt, parse_label, BackendKind, ContextQuerySpec,
    PROMPT_TEMPLATE_VERSION,
};
pub use query::{query_context, query_context_distribution, QueryOptions, QueryResult, RateLimiter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("API key missing: environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("sample {sample_index}: no parseable label after {attempts} attempts; last response: {raw:?}")]
    UnparseableAfterRetries {
        sample_index: usize,
        attempts: usize,
        raw: String,
    },
    #[error("weight {0} outside [0.5, 1.0]")]
    WeightOutOfRange(f64),
    #[error("invalid query: {0}")]
    InvalidSpec(String),
    #[error("mock table: {0}")]
    MockTable(String),
    #[error("response cache: {0}")]
    Cache(String),
}
