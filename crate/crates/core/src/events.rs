//! Events pushed to clients, one per revision.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TurnStarted,
    OptionDelta,
    OptionSetComplete,
    InlineOptionsChanged,
    ChatDelta,
    ChatComplete,
    RegenStarted,
    SessionOptionsChanged,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::TurnStarted => "turn_started",
            EventKind::OptionDelta => "option_delta",
            EventKind::OptionSetComplete => "option_set_complete",
            EventKind::InlineOptionsChanged => "inline_options_changed",
            EventKind::ChatDelta => "chat_delta",
            EventKind::ChatComplete => "chat_complete",
            EventKind::RegenStarted => "regen_started",
            EventKind::SessionOptionsChanged => "session_options_changed",
            EventKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub revision: u64,
    pub session: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<u64>,
    pub kind: EventKind,
    pub payload: Value,
}

impl StreamEvent {
    /// Compact JSON; the form used in transcripts and SSE `data:` lines.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    /// One server-sent event frame.
    pub fn to_sse(&self) -> String {
        format!("event: {}\nid: {}\ndata: {}\n\n", self.kind.as_str(), self.revision, self.to_json())
    }
}
