//! Chat responses grounded in the current refinements.

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, CompletionBackend, CompletionRequest, GatewayError};
use crate::prompt::{assemble_chat_prompt, AssembledPrompt, RefinementBlock};
use crate::session::{SessionError, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegenCause {
    Initial,
    OptionChanged,
    SessionOptionsChanged,
}

impl RegenCause {
    pub fn as_str(self) -> &'static str {
        match self {
            RegenCause::Initial => "initial",
            RegenCause::OptionChanged => "option_changed",
            RegenCause::SessionOptionsChanged => "session_options_changed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub session: String,
    pub turn: u64,
    pub cause: RegenCause,
    pub block: RefinementBlock,
    pub prompt: AssembledPrompt,
}

impl ChatRequest {
    /// Builds the request for `turn` from the state as it is right now.
    pub fn build(state: &SessionState, turn: u64, cause: RegenCause) -> Result<Self, SessionError> {
        let latest = state.latest_turn().ok_or(SessionError::NoTurns)?;
        let t = state.turn(turn).ok_or(SessionError::UnknownTurn(turn))?;
        if latest.id != turn {
            return Err(SessionError::NotLatestTurn);
        }
        let block = state.refinement_block();
        let prompt = assemble_chat_prompt(&state.history_before(turn), &t.user_text, &block)
            .map_err(|_| SessionError::EmptyPrompt)?;
        Ok(ChatRequest {
            session: state.id.clone(),
            turn,
            cause,
            block,
            prompt,
        })
    }

    pub fn completion_request(&self, config: &BackendConfig, sequence: u64) -> CompletionRequest {
        CompletionRequest::new(config, self.prompt.system_text.clone(), self.prompt.messages.clone(), sequence)
    }
}

/// Request that regenerates the latest response.
pub fn regeneration_request(state: &SessionState, cause: RegenCause) -> Result<ChatRequest, SessionError> {
    let latest = state.latest_turn().ok_or(SessionError::NoTurns)?;
    ChatRequest::build(state, latest.id, cause)
}

/// Accumulates deltas of one chat call.
#[derive(Debug, Default, Clone)]
pub struct ChatGeneration {
    text: String,
}

impl ChatGeneration {
    pub fn push(&mut self, delta: &str) {
        self.text.push_str(delta);
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// Streams one response, handing each delta to `on_delta`; returns the full text.
pub async fn generate_response(
    backend: &dyn CompletionBackend,
    config: &BackendConfig,
    request: &ChatRequest,
    sequence: u64,
    mut on_delta: impl FnMut(&str),
) -> Result<String, GatewayError> {
    let mut stream = backend.stream_completion(request.completion_request(config, sequence)).await?;
    let mut generation = ChatGeneration::default();
    while let Some(chunk) = stream.next().await {
        let chunk = chunk?;
        on_delta(&chunk);
        generation.push(&chunk);
    }
    Ok(generation.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Fixture, ReplayBackend, ScriptedCompletion};
    use crate::options::{OptionSet, PromptOption};
    use crate::prompt::extract_refinement_payload;
    use crate::session::{Mode, TurnStatus};

    fn state() -> SessionState {
        let mut s = SessionState::new("s1", Mode::Dynamic);
        let t = s.begin_turn("first").unwrap();
        s.complete_response(t, "one".into()).unwrap();
        let t = s.begin_turn("second").unwrap();
        let opt = PromptOption::radio("Depth", "", &[("a", "Shallow"), ("b", "Deep")], "Shallow", "").unwrap();
        s.set_inline_options(t, OptionSet::from_options(vec![opt]).unwrap()).unwrap();
        s.set_status(t, TurnStatus::GeneratingResponse).unwrap();
        s
    }

    #[test]
    fn no_turns() {
        let s = SessionState::new("s", Mode::Dynamic);
        assert_eq!(regeneration_request(&s, RegenCause::OptionChanged), Err(SessionError::NoTurns));
    }

    #[test]
    fn older_turn_refused() {
        assert_eq!(
            ChatRequest::build(&state(), 1, RegenCause::OptionChanged),
            Err(SessionError::NotLatestTurn)
        );
    }

    #[test]
    fn new_value_reaches_block() {
        let mut s = state();
        s.update_inline_option(2, "Depth", "Deep".into()).unwrap();
        let req = regeneration_request(&s, RegenCause::OptionChanged).unwrap();
        let payload = extract_refinement_payload(&req.prompt.system_text).unwrap();
        assert!(payload.contains("\"value\": \"Deep\""));
        assert_eq!(req.prompt.messages.len(), 3);
    }

    #[tokio::test]
    async fn deltas_concatenate_to_final() {
        let backend = ReplayBackend::new(Fixture::new("c").push(ScriptedCompletion::from_chunks(["Hel", "lo", "!"])));
        let req = regeneration_request(&state(), RegenCause::Initial).unwrap();
        let mut seen = String::new();
        let text = generate_response(&backend, &BackendConfig::default(), &req, 1, |d| seen.push_str(d))
            .await
            .unwrap();
        assert_eq!(text, "Hello!");
        assert_eq!(seen, text);
    }
}
