//! Two-tier session state: per-turn inline options and session-wide options.
//!
//! These are the synchronous state transitions. Reactivity (regeneration,
//! debouncing, backend calls) is layered on top by [`crate::engine`], which
//! also owns the revision counter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::options::{
    encode_options, parse_option_document, set_value, ControlValue, OptionSet, Origin, ParseError, PromptOption,
    ValueError,
};
use crate::prompt::{serialize_refinements, Exchange, RefinementBlock};

pub const STATIC_PRESET_JSON: &str = include_str!("../templates/static_preset.v1.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dynamic,
    Static,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dynamic" => Ok(Mode::Dynamic),
            "static" => Ok(Mode::Static),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Inline,
    Session,
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inline" => Ok(Tier::Inline),
            "session" => Ok(Tier::Session),
            other => Err(format!("unknown tier `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnStatus {
    GeneratingOptions,
    GeneratingResponse,
    Complete,
    Errored,
}

impl TurnStatus {
    /// Position in the lifecycle; complete and errored share the last stage.
    pub fn stage(self) -> u8 {
        match self {
            TurnStatus::GeneratingOptions => 0,
            TurnStatus::GeneratingResponse => 1,
            TurnStatus::Complete | TurnStatus::Errored => 2,
        }
    }

    pub fn is_generating(self) -> bool {
        self.stage() < 2
    }

    /// Forward by at most one stage, or between the two terminal states.
    pub fn can_become(self, next: TurnStatus) -> bool {
        let (a, b) = (self.stage(), next.stage());
        b == a || b == a + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub id: u64,
    pub user_text: String,
    pub inline_options: OptionSet,
    pub assistant_text: Option<String>,
    pub status: TurnStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("a prompt is already being processed")]
    Busy,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("only the latest turn can be edited")]
    NotLatestTurn,
    #[error("unknown turn {0}")]
    UnknownTurn(u64),
    #[error("no option labelled `{0}`")]
    UnknownLabel(String),
    #[error("session already has an option labelled `{0}`")]
    DuplicateSessionLabel(String),
    #[error("the latest turn already has an inline option labelled `{0}`")]
    DuplicateInlineLabel(String),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("not available in static mode")]
    StaticMode,
    #[error("session has no turns")]
    NoTurns,
}

impl SessionError {
    pub fn name(&self) -> &'static str {
        match self {
            SessionError::Busy => "Busy",
            SessionError::EmptyPrompt => "EmptyPrompt",
            SessionError::EmptyUtterance => "EmptyUtterance",
            SessionError::NotLatestTurn => "NotLatestTurn",
            SessionError::UnknownTurn(_) => "UnknownTurn",
            SessionError::UnknownLabel(_) => "UnknownLabel",
            SessionError::DuplicateSessionLabel(_) => "DuplicateSessionLabel",
            SessionError::DuplicateInlineLabel(_) => "DuplicateInlineLabel",
            SessionError::Value(e) => e.name(),
            SessionError::Parse(e) => e.name(),
            SessionError::StaticMode => "StaticMode",
            SessionError::NoTurns => "NoTurns",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub mode: Mode,
    pub session_options: OptionSet,
    pub turns: Vec<ChatTurn>,
    pub revision: u64,
}

/// The six preset controls used in static mode.
pub fn static_preset() -> OptionSet {
    parse_option_document(STATIC_PRESET_JSON, Origin::Preset).expect("bundled preset is valid")
}

impl SessionState {
    pub fn new(id: impl Into<String>, mode: Mode) -> Self {
        let mut s = SessionState {
            id: id.into(),
            mode,
            session_options: OptionSet::new(),
            turns: Vec::new(),
            revision: 0,
        };
        if mode == Mode::Static {
            s.session_options = static_preset();
        }
        s
    }

    pub fn latest_turn(&self) -> Option<&ChatTurn> {
        self.turns.last()
    }

    pub fn turn(&self, id: u64) -> Option<&ChatTurn> {
        self.turns.iter().find(|t| t.id == id)
    }

    fn turn_mut(&mut self, id: u64) -> Option<&mut ChatTurn> {
        self.turns.iter_mut().find(|t| t.id == id)
    }

    fn latest_mut_checked(&mut self, turn: u64) -> Result<&mut ChatTurn, SessionError> {
        let latest = self.turns.last().map(|t| t.id).ok_or(SessionError::NoTurns)?;
        if self.turn(turn).is_none() {
            return Err(SessionError::UnknownTurn(turn));
        }
        if latest != turn {
            return Err(SessionError::NotLatestTurn);
        }
        Ok(self.turns.last_mut().expect("latest exists"))
    }

    pub fn is_busy(&self) -> bool {
        self.latest_turn().is_some_and(|t| t.status.is_generating())
    }

    /// Appends a new turn. Dynamic turns start by generating options; static
    /// turns go straight to the response.
    pub fn begin_turn(&mut self, text: &str) -> Result<u64, SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyPrompt);
        }
        if self.is_busy() {
            return Err(SessionError::Busy);
        }
        let id = self.turns.last().map_or(1, |t| t.id + 1);
        let status = match self.mode {
            Mode::Dynamic => TurnStatus::GeneratingOptions,
            Mode::Static => TurnStatus::GeneratingResponse,
        };
        self.turns.push(ChatTurn {
            id,
            user_text: text.to_string(),
            inline_options: OptionSet::new(),
            assistant_text: None,
            status,
            error: None,
        });
        Ok(id)
    }

    pub fn set_status(&mut self, turn: u64, status: TurnStatus) -> Result<(), SessionError> {
        let t = self.turn_mut(turn).ok_or(SessionError::UnknownTurn(turn))?;
        debug_assert!(t.status.can_become(status), "{:?} -> {:?}", t.status, status);
        t.status = status;
        Ok(())
    }

    pub fn set_inline_options(&mut self, turn: u64, options: OptionSet) -> Result<(), SessionError> {
        let t = self.turn_mut(turn).ok_or(SessionError::UnknownTurn(turn))?;
        t.inline_options = options;
        Ok(())
    }

    pub fn complete_response(&mut self, turn: u64, text: String) -> Result<(), SessionError> {
        let t = self.turn_mut(turn).ok_or(SessionError::UnknownTurn(turn))?;
        t.assistant_text = Some(text);
        t.error = None;
        t.status = TurnStatus::Complete;
        Ok(())
    }

    /// Marks the turn errored; any previous response text is kept.
    pub fn fail_response(&mut self, turn: u64, reason: String) -> Result<(), SessionError> {
        let t = self.turn_mut(turn).ok_or(SessionError::UnknownTurn(turn))?;
        t.error = Some(reason);
        t.status = TurnStatus::Errored;
        Ok(())
    }

    pub fn update_inline_option(
        &mut self,
        turn: u64,
        label: &str,
        value: ControlValue,
    ) -> Result<PromptOption, SessionError> {
        let t = self.latest_mut_checked(turn)?;
        let current = t
            .inline_options
            .get(label)
            .ok_or_else(|| SessionError::UnknownLabel(label.to_string()))?;
        let updated = set_value(current, value)?;
        t.inline_options.replace(updated.clone());
        Ok(updated)
    }

    pub fn update_session_option(&mut self, label: &str, value: ControlValue) -> Result<PromptOption, SessionError> {
        let current = self
            .session_options
            .get(label)
            .ok_or_else(|| SessionError::UnknownLabel(label.to_string()))?;
        let updated = set_value(current, value)?;
        self.session_options.replace(updated.clone());
        Ok(updated)
    }

    /// Moves an inline option of the latest turn into the session options.
    pub fn pin_option(&mut self, turn: u64, label: &str) -> Result<PromptOption, SessionError> {
        if self.mode == Mode::Static {
            return Err(SessionError::StaticMode);
        }
        if self.latest_mut_checked(turn)?.inline_options.get(label).is_none() {
            return Err(SessionError::UnknownLabel(label.to_string()));
        }
        if self.session_options.contains_label(label) {
            return Err(SessionError::DuplicateSessionLabel(label.to_string()));
        }
        let t = self.latest_mut_checked(turn)?;
        let option = t.inline_options.remove(label).expect("checked above").with_origin(Origin::Pinned);
        self.session_options
            .push(option.clone())
            .expect("label checked above");
        Ok(option)
    }

    /// Moves a session option back into the latest turn's inline options.
    pub fn unpin_option(&mut self, label: &str) -> Result<PromptOption, SessionError> {
        if self.mode == Mode::Static {
            return Err(SessionError::StaticMode);
        }
        let latest = self.turns.last().ok_or(SessionError::NoTurns)?;
        if !self.session_options.contains_label(label) {
            return Err(SessionError::UnknownLabel(label.to_string()));
        }
        if latest.inline_options.contains_label(label) {
            return Err(SessionError::DuplicateInlineLabel(label.to_string()));
        }
        let option = self.session_options.remove(label).expect("checked above");
        let t = self.turns.last_mut().expect("checked above");
        t.inline_options.push(option.clone()).expect("label checked above");
        Ok(option)
    }

    pub fn delete_option(&mut self, tier: Tier, label: &str) -> Result<PromptOption, SessionError> {
        if self.mode == Mode::Static {
            return Err(SessionError::StaticMode);
        }
        let set = match tier {
            Tier::Session => &mut self.session_options,
            Tier::Inline => &mut self.turns.last_mut().ok_or(SessionError::NoTurns)?.inline_options,
        };
        set.remove(label).ok_or_else(|| SessionError::UnknownLabel(label.to_string()))
    }

    pub fn export_session_options(&self) -> String {
        encode_options(&self.session_options)
    }

    /// Replaces the session options wholesale; nothing changes on error.
    pub fn import_session_options(&mut self, json: &str) -> Result<(), SessionError> {
        if self.mode == Mode::Static {
            return Err(SessionError::StaticMode);
        }
        self.session_options = parse_option_document(json, Origin::UserJson)?;
        Ok(())
    }

    /// Appends generated session options, skipping labels already present.
    pub fn add_session_options(&mut self, incoming: &OptionSet) -> Vec<String> {
        let (merged, dropped) = crate::options::merge_dedupe(&self.session_options, incoming);
        self.session_options = merged;
        dropped.into_iter().map(|d| d.label).collect()
    }

    pub fn load_static_preset(&mut self) -> Result<(), SessionError> {
        if self.mode != Mode::Static {
            return Err(SessionError::StaticMode);
        }
        self.session_options = static_preset();
        Ok(())
    }

    /// Exchanges before `turn`, using each turn's final assistant text.
    pub fn history_before(&self, turn: u64) -> Vec<Exchange> {
        self.turns
            .iter()
            .take_while(|t| t.id != turn)
            .map(|t| Exchange {
                user: t.user_text.clone(),
                assistant: t.assistant_text.clone(),
            })
            .collect()
    }

    pub fn history(&self) -> Vec<Exchange> {
        self.turns
            .iter()
            .map(|t| Exchange {
                user: t.user_text.clone(),
                assistant: t.assistant_text.clone(),
            })
            .collect()
    }

    /// Refinements for the latest response: session options plus the latest
    /// turn's inline options.
    pub fn refinement_block(&self) -> RefinementBlock {
        let empty = OptionSet::new();
        let inline = self.latest_turn().map_or(&empty, |t| &t.inline_options);
        serialize_refinements(&self.session_options, inline)
    }

    /// Collapses in-flight statuses to errored; used when loading a snapshot.
    pub fn collapse_in_flight(&mut self) {
        for t in &mut self.turns {
            if t.status.is_generating() {
                t.status = TurnStatus::Errored;
                t.error = Some("interrupted".into());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::options::Appearance;

    fn language_option() -> PromptOption {
        PromptOption::radio(
            "Programming Language",
            "Language you are working in",
            &[("Python", "Use Python"), ("Rust", "Use Rust")],
            "Use Rust",
            "",
        )
        .unwrap()
        .with_origin(Origin::GeneratedInline)
    }

    fn session_with_turn() -> SessionState {
        let mut s = SessionState::new("s", Mode::Dynamic);
        let t = s.begin_turn("help me").unwrap();
        s.set_inline_options(t, OptionSet::from_options(vec![language_option()]).unwrap())
            .unwrap();
        s.set_status(t, TurnStatus::GeneratingResponse).unwrap();
        s.complete_response(t, "ok".into()).unwrap();
        s
    }

    #[test]
    fn preset_matches_listing() {
        let s = SessionState::new("s", Mode::Static);
        let p = &s.session_options;
        assert_eq!(p.len(), 6);
        assert!(p
            .iter()
            .all(|o| o.as_choice().unwrap().appearance() == Appearance::SingleSelectRadio));
        assert_eq!(
            p.get("Expertise Level").unwrap().value(),
            ControlValue::Single("I am a beginner with limited knowledge".into())
        );
        let tone: Vec<_> = p
            .get("Tone of Explanation")
            .unwrap()
            .as_choice()
            .unwrap()
            .choices()
            .iter()
            .map(|c| c.label.as_str())
            .collect();
        assert_eq!(tone, vec!["Formal", "Informal", "Encouraging", "Neutral"]);
    }

    #[test]
    fn pin_moves_option() {
        let mut s = session_with_turn();
        let before = s.refinement_block().included_labels;
        let pinned = s.pin_option(1, "Programming Language").unwrap();
        assert_eq!(pinned.origin, Origin::Pinned);
        assert!(s.latest_turn().unwrap().inline_options.is_empty());
        assert!(s.session_options.contains_label("Programming Language"));
        assert!(crate::prompt::same_label_set(&before, &s.refinement_block().included_labels));
        assert_eq!(
            s.pin_option(1, "Programming Language"),
            Err(SessionError::UnknownLabel("Programming Language".into()))
        );
    }

    #[test]
    fn pin_into_existing_session_label_fails() {
        let mut s = session_with_turn();
        s.session_options.push(language_option()).unwrap();
        assert_eq!(
            s.pin_option(1, "programming language"),
            Err(SessionError::DuplicateSessionLabel("programming language".into()))
        );
    }

    #[test]
    fn unpin_restores_inline() {
        let mut s = session_with_turn();
        s.pin_option(1, "Programming Language").unwrap();
        s.unpin_option("Programming Language").unwrap();
        assert!(s.session_options.is_empty());
        assert_eq!(s.latest_turn().unwrap().inline_options.len(), 1);
    }

    #[test]
    fn older_turns_are_frozen() {
        let mut s = session_with_turn();
        s.begin_turn("next").unwrap();
        assert_eq!(
            s.update_inline_option(1, "Programming Language", "Use Python".into()),
            Err(SessionError::NotLatestTurn)
        );
        assert_eq!(
            s.update_inline_option(2, "Nope", "x".into()),
            Err(SessionError::UnknownLabel("Nope".into()))
        );
    }

    #[test]
    fn busy_and_empty_prompt() {
        let mut s = SessionState::new("s", Mode::Dynamic);
        assert_eq!(s.begin_turn(""), Err(SessionError::EmptyPrompt));
        s.begin_turn("a").unwrap();
        assert_eq!(s.begin_turn("b"), Err(SessionError::Busy));
    }

    #[test]
    fn import_export_are_byte_stable() {
        let mut s = SessionState::new("s", Mode::Dynamic);
        s.import_session_options(STATIC_PRESET_JSON).unwrap();
        assert_eq!(s.session_options.len(), 6);
        let first = s.export_session_options();
        s.import_session_options(&first).unwrap();
        assert_eq!(s.export_session_options(), first);
        s.import_session_options("[]").unwrap();
        assert!(s.session_options.is_empty());
        assert!(s.import_session_options("[{").is_err());
    }

    #[test]
    fn static_mode_refuses_structural_edits() {
        let mut s = SessionState::new("s", Mode::Static);
        assert_eq!(s.import_session_options("[]"), Err(SessionError::StaticMode));
        assert_eq!(s.delete_option(Tier::Session, "Expertise Level"), Err(SessionError::StaticMode));
        s.update_session_option("Expertise Level", "I am highly knowledgeable and experienced".into())
            .unwrap();
        assert_eq!(s.begin_turn("x").map(|id| s.turn(id).unwrap().status), Ok(TurnStatus::GeneratingResponse));
    }

    #[test]
    fn status_stages() {
        use TurnStatus::*;
        assert!(GeneratingOptions.can_become(GeneratingResponse));
        assert!(!GeneratingOptions.can_become(Complete));
        assert!(!Complete.can_become(GeneratingResponse));
        assert!(Complete.can_become(Errored));
    }
}
