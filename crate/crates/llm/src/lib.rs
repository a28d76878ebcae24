//! Text-to-layout through a chat-completion LLM.
//!
//! [`prompt`] builds the in-context prompt, [`backend`] talks to a live
//! endpoint or a table-driven mock, [`session`] keeps multi-round dialogs
//! and [`bench`] runs the reasoning benchmarks through any backend.

pub mod backend;
pub mod bench;
pub mod config;
pub mod fixtures;
pub mod prompt;
pub mod session;

use lmd_core::dsl::{extract_layout_block, parse_layout, ParseDiagnostic, RawCompletion};
use lmd_core::{Canvas, Layout};
use thiserror::Error;
use uuid::Uuid;

pub use backend::{request_layout, ChatMessage, HttpLlm, LlmBackend, MockLlm, Role};
pub use bench::{oracle_mock, run_benchmark, scripted_failure_mock, BenchmarkRun};
pub use config::{ApiKey, LlmConfig, PromptRole};
pub use prompt::{build_prompt, make_multilingual_template, Example, PromptTemplate};
pub use session::{dialog_turn, start_session, DialogSession, SessionStore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited{}", retry_after.map(|d| format!(", retry after {d:?}")).unwrap_or_default())]
    RateLimited {
        retry_after: Option<std::time::Duration>,
    },
    #[error("api error {status}: {body}")]
    Api { status: u16, body: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("mock has no completion for {0:?}")]
    NoMockMatch(String),
    #[error("unknown session {0}")]
    SessionNotFound(Uuid),
}

/// Parses an assistant completion, falling back to pulling the layout block
/// out of surrounding chatter.
pub fn parse_completion(text: &str, canvas: Canvas) -> Result<Layout, ParseDiagnostic> {
    match parse_layout(&RawCompletion::new(text), canvas) {
        Ok(l) => Ok(l),
        Err(first) => match extract_layout_block(text) {
            Ok(block) => parse_layout(&block, canvas),
            Err(_) => Err(first),
        },
    }
}
