//! Completion backends.
//!
//! Everything above this layer talks to a [`CompletionBackend`], which turns a
//! [`CompletionRequest`] into a stream of text chunks. Three implementations
//! are interchangeable:
//!
//! - [`OpenAiBackend`]: live, chat-completions HTTP with streamed deltas.
//! - [`RecordingBackend`]: wraps another backend and appends every completion
//!   to a fixture file.
//! - [`ReplayBackend`]: plays completions back from a fixture, in order,
//!   including injected faults.

mod fixture;
mod openai;
mod record;
mod replay;

use futures::stream::BoxStream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::ChatMessage;

pub use fixture::{Fault, Fixture, FixtureError, ScriptedCompletion};
pub use openai::{OpenAiBackend, OpenAiConfig, SseLineDecoder};
pub use record::RecordingBackend;
pub use replay::ReplayBackend;

pub const DEFAULT_MODEL: &str = "gpt4-turbo";
pub const DEFAULT_TEMPERATURE: f32 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("transport error{}: {detail}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, detail: String },
    #[error("fixture has no completion left")]
    FixtureExhausted,
    #[error("injected fault: {0}")]
    FaultInjected(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn name(&self) -> &'static str {
        match self {
            GatewayError::Transport { .. } => "Transport",
            GatewayError::FixtureExhausted => "FixtureExhausted",
            GatewayError::FaultInjected(_) => "FaultInjected",
            GatewayError::Config(_) => "Config",
        }
    }
}

/// Sampling defaults shared by option generation and chat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub model: String,
    pub temperature: f32,
    pub max_tokens: Option<u32>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_tokens: Option<u32>,
    pub stream: bool,
    /// Strictly increasing per session.
    pub sequence: u64,
}

impl CompletionRequest {
    pub fn new(config: &BackendConfig, system: String, messages: Vec<ChatMessage>, sequence: u64) -> Self {
        CompletionRequest {
            model: config.model.clone(),
            system,
            messages,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            stream: true,
            sequence,
        }
    }
}

/// Chunks in arrival order. The stream ends after the last chunk on success,
/// or after yielding one `Err` on failure.
pub type ChunkStream = BoxStream<'static, Result<String, GatewayError>>;

#[async_trait::async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn stream_completion(&self, request: CompletionRequest) -> Result<ChunkStream, GatewayError>;
}

/// Collects a whole completion; convenience for callers that don't stream.
pub async fn collect_completion(
    backend: &dyn CompletionBackend,
    request: CompletionRequest,
) -> Result<String, GatewayError> {
    use futures::StreamExt;
    let mut stream = backend.stream_completion(request).await?;
    let mut text = String::new();
    while let Some(chunk) = stream.next().await {
        text.push_str(&chunk?);
    }
    Ok(text)
}
