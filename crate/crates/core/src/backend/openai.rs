//! Live backend for chat-completions style HTTP APIs with `stream: true`.

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChunkStream, CompletionBackend, CompletionRequest, GatewayError, DEFAULT_MODEL};
use crate::prompt::Role;

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Clone, Serialize, Deserialize)]
pub struct OpenAiConfig {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
}

impl std::fmt::Debug for OpenAiConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .finish()
    }
}

impl OpenAiConfig {
    /// Reads `PRC_API_BASE`, `PRC_API_KEY` (or `OPENAI_API_KEY`) and `PRC_MODEL`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        OpenAiConfig {
            base_url: var("PRC_API_BASE").unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
            api_key: var("PRC_API_KEY").or_else(|| var("OPENAI_API_KEY")),
            model: var("PRC_MODEL").unwrap_or_else(|| DEFAULT_MODEL.to_string()),
        }
    }
}

pub struct OpenAiBackend {
    config: OpenAiConfig,
    client: reqwest::Client,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Self {
        OpenAiBackend {
            config,
            client: reqwest::Client::new(),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct ChunkPayload {
    #[serde(default)]
    choices: Vec<ChunkChoice>,
}

#[derive(Deserialize)]
struct ChunkChoice {
    #[serde(default)]
    delta: Delta,
}

#[derive(Default, Deserialize)]
struct Delta {
    #[serde(default)]
    content: Option<String>,
}

/// Splits a server-sent event byte stream into `data:` payloads.
#[derive(Debug, Default)]
pub struct SseLineDecoder {
    buf: Vec<u8>,
    data: Vec<String>,
}

impl SseLineDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the data of every event completed by `bytes`.
    pub fn push(&mut self, bytes: &[u8]) -> Vec<String> {
        self.buf.extend_from_slice(bytes);
        let mut events = Vec::new();
        while let Some(nl) = self.buf.iter().position(|&b| b == b'\n') {
            let mut line: Vec<u8> = self.buf.drain(..=nl).collect();
            line.pop();
            if line.last() == Some(&b'\r') {
                line.pop();
            }
            let line = String::from_utf8_lossy(&line).into_owned();
            if line.is_empty() {
                if !self.data.is_empty() {
                    events.push(self.data.join("\n"));
                    self.data.clear();
                }
            } else if let Some(rest) = line.strip_prefix("data:") {
                self.data.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
            }
        }
        events
    }
}

enum Item {
    Chunk(String),
    Done,
}

fn parse_event(data: &str) -> Result<Item, GatewayError> {
    if data.trim() == "[DONE]" {
        return Ok(Item::Done);
    }
    let payload: ChunkPayload = serde_json::from_str(data).map_err(|e| GatewayError::Transport {
        status: None,
        detail: format!("malformed stream payload: {e}"),
    })?;
    Ok(Item::Chunk(
        payload
            .choices
            .into_iter()
            .filter_map(|c| c.delta.content)
            .collect::<String>(),
    ))
}

#[async_trait::async_trait]
impl CompletionBackend for OpenAiBackend {
    async fn stream_completion(&self, request: CompletionRequest) -> Result<ChunkStream, GatewayError> {
        let mut messages = Vec::with_capacity(request.messages.len() + 1);
        if !request.system.is_empty() {
            messages.push(json!({"role": "system", "content": request.system}));
        }
        for m in &request.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "stream": true,
        });
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = json!(max);
        }

        let mut http = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().await.map_err(|e| GatewayError::Transport {
            status: None,
            detail: e.to_string(),
        })?;
        let status = response.status();
        if !status.is_success() {
            let detail = response.text().await.unwrap_or_default();
            return Err(GatewayError::Transport {
                status: Some(status.as_u16()),
                detail,
            });
        }

        let bytes = response.bytes_stream();
        let state = (bytes, SseLineDecoder::new(), std::collections::VecDeque::<String>::new(), false);
        Ok(futures::stream::unfold(state, |(mut bytes, mut sse, mut pending, finished)| async move {
            if finished {
                return None;
            }
            loop {
                if let Some(data) = pending.pop_front() {
                    match parse_event(&data) {
                        Ok(Item::Done) => return None,
                        Ok(Item::Chunk(text)) if text.is_empty() => continue,
                        Ok(Item::Chunk(text)) => return Some((Ok(text), (bytes, sse, pending, false))),
                        Err(e) => return Some((Err(e), (bytes, sse, pending, true))),
                    }
                }
                match bytes.next().await {
                    Some(Ok(b)) => pending.extend(sse.push(&b)),
                    Some(Err(e)) => {
                        let err = GatewayError::Transport {
                            status: None,
                            detail: e.to_string(),
                        };
                        return Some((Err(err), (bytes, sse, pending, true)));
                    }
                    None => {
                        let err = GatewayError::Transport {
                            status: None,
                            detail: "stream ended without [DONE]".into(),
                        };
                        return Some((Err(err), (bytes, sse, pending, true)));
                    }
                }
            }
        })
        .boxed())
    }
}
