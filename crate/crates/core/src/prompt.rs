//! Prompt assembly: the refinement serializer and the two prompt templates.
//!
//! The chat prompt wraps the serialized options between a fixed instruction
//! header and footer. The option prompt is a long instruction text with two
//! placeholders, `${currentContent}` (the conversation transcript) and
//! `${currentOptions}` (options already on screen). Both templates ship as
//! resource files under `templates/`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::options::{encode_options, normalize_label, OptionSet, PromptOption};

pub const OPTION_TEMPLATE: &str = include_str!("../templates/option_module.v1.txt");
pub const CHAT_START_INSTRUCTIONS: &str = include_str!("../templates/chat_start.v1.txt");
pub const CHAT_END_INSTRUCTIONS: &str = include_str!("../templates/chat_end.v1.txt");

pub const START_FRAME: &str = "#START SELECTED OPTIONS";
pub const END_FRAME: &str = "#END SELECTED OPTIONS";

/// Only the most recent turns are rendered into the option prompt.
pub const HISTORY_TURN_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("user message is empty")]
    EmptyUserMessage,
    #[error("missing template variable `{0}`")]
    MissingVariable(String),
}

/// One completed exchange of the conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub user: String,
    /// Final assistant text; `None` if the turn never produced one.
    pub assistant: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RefinementBlock {
    /// Canonical array of the selected option records.
    pub text: String,
    pub included_labels: Vec<String>,
    /// Session labels shadowed by an inline option with the same label.
    pub dropped_session_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub system_text: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Var(String),
}

/// `${name}` placeholder template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Self {
        let mut segments = Vec::new();
        let mut rest = source;
        while let Some(start) = rest.find("${") {
            let after = &rest[start + 2..];
            match after.find('}') {
                Some(end) if is_identifier(&after[..end]) => {
                    if start > 0 {
                        segments.push(Segment::Text(rest[..start].to_string()));
                    }
                    segments.push(Segment::Var(after[..end].to_string()));
                    rest = &after[end + 1..];
                }
                _ => {
                    segments.push(Segment::Text(rest[..start + 2].to_string()));
                    rest = after;
                }
            }
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        Template { segments }
    }

    pub fn variables(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Var(v) => Some(v.as_str()),
                Segment::Text(_) => None,
            })
            .collect()
    }

    /// Literal text outside the placeholders, in order.
    pub fn literal_parts(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Text(t) => Some(t.as_str()),
                Segment::Var(_) => None,
            })
            .collect()
    }

    /// Substitutes every placeholder in one pass; substituted text is never
    /// re-scanned.
    pub fn render(&self, values: &HashMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Text(t) => out.push_str(t),
                Segment::Var(name) => out.push_str(
                    values
                        .get(name.as_str())
                        .ok_or_else(|| PromptError::MissingVariable(name.clone()))?,
                ),
            }
        }
        Ok(out)
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn option_template() -> Template {
    Template::parse(OPTION_TEMPLATE)
}

/// Serializes session options followed by inline options. An inline option
/// shadows a session option with the same (normalized) label.
pub fn serialize_refinements(session: &OptionSet, inline: &OptionSet) -> RefinementBlock {
    let mut selected: Vec<&PromptOption> = Vec::with_capacity(session.len() + inline.len());
    let mut dropped_session_labels = Vec::new();
    for option in session {
        if inline.contains_label(option.label()) {
            dropped_session_labels.push(option.label().to_string());
        } else {
            selected.push(option);
        }
    }
    selected.extend(inline.iter());
    RefinementBlock {
        text: encode_options(selected.iter().copied()),
        included_labels: selected.iter().map(|o| o.label().to_string()).collect(),
        dropped_session_labels,
    }
}

pub fn chat_system_text(block: &RefinementBlock) -> String {
    let mut s = String::with_capacity(CHAT_START_INSTRUCTIONS.len() + block.text.len() + CHAT_END_INSTRUCTIONS.len());
    s.push_str(CHAT_START_INSTRUCTIONS);
    s.push_str(&block.text);
    s.push_str(CHAT_END_INSTRUCTIONS);
    s
}

/// Builds the chat prompt: framed refinements as system text, then the prior
/// exchanges, then the new user message.
pub fn assemble_chat_prompt(
    history: &[Exchange],
    user_msg: &str,
    block: &RefinementBlock,
) -> Result<AssembledPrompt, PromptError> {
    if user_msg.trim().is_empty() {
        return Err(PromptError::EmptyUserMessage);
    }
    let mut messages = Vec::with_capacity(history.len() * 2 + 1);
    for exchange in history {
        messages.push(ChatMessage::user(&exchange.user));
        if let Some(a) = &exchange.assistant {
            messages.push(ChatMessage::assistant(a));
        }
    }
    messages.push(ChatMessage::user(user_msg));
    Ok(AssembledPrompt {
        system_text: chat_system_text(block),
        messages,
    })
}

/// Plain transcript of the most recent turns plus the latest input.
pub fn render_transcript(history: &[Exchange], latest_user_input: &str) -> String {
    let skip = history.len().saturating_sub(HISTORY_TURN_LIMIT);
    let mut lines = Vec::new();
    for exchange in &history[skip..] {
        lines.push(format!("User: {}", exchange.user));
        if let Some(a) = &exchange.assistant {
            lines.push(format!("Assistant: {a}"));
        }
    }
    if !latest_user_input.is_empty() {
        lines.push(format!("User: {latest_user_input}"));
    }
    lines.join("\n")
}

pub fn assemble_option_prompt(history: &[Exchange], latest_user_input: &str, current_options: &OptionSet) -> String {
    let values = HashMap::from([
        ("currentContent", render_transcript(history, latest_user_input)),
        ("currentOptions", encode_options(current_options)),
    ]);
    option_template()
        .render(&values)
        .expect("option template only uses currentContent and currentOptions")
}

/// Returns the payload between the chat frames, if the text has exactly one
/// start frame followed by exactly one end frame.
pub fn extract_refinement_payload(system_text: &str) -> Option<&str> {
    if system_text.matches(START_FRAME).count() != 1 || system_text.matches(END_FRAME).count() != 1 {
        return None;
    }
    let start = system_text.strip_prefix(CHAT_START_INSTRUCTIONS)?;
    start.strip_suffix(CHAT_END_INSTRUCTIONS)
}

/// True if the two label lists name the same options, ignoring order.
pub fn same_label_set(a: &[String], b: &[String]) -> bool {
    let mut a: Vec<String> = a.iter().map(|l| normalize_label(l)).collect();
    let mut b: Vec<String> = b.iter().map(|l| normalize_label(l)).collect();
    a.sort();
    b.sort();
    a == b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::options::{parse_option_document, Origin};

    fn expertise() -> PromptOption {
        PromptOption::radio(
            "Expertise Level",
            "Select your level of expertise",
            &[
                ("Beginner", "I am a beginner with limited knowledge"),
                ("Intermediate", "I have a moderate level of expertise"),
                ("Advanced", "I am highly knowledgeable and experienced"),
            ],
            "I am a beginner with limited knowledge",
            "tailor",
        )
        .unwrap()
    }

    #[test]
    fn empty_sets_serialize_as_empty_array() {
        let block = serialize_refinements(&OptionSet::new(), &OptionSet::new());
        assert_eq!(block.text, "[]");
        let prompt = assemble_chat_prompt(&[], "hi", &block).unwrap();
        assert!(prompt.system_text.contains("<options>\n[]</options>"));
        assert_eq!(prompt.messages, vec![ChatMessage::user("hi")]);
    }

    #[test]
    fn session_option_serialized_with_value() {
        let session = OptionSet::from_options(vec![expertise()]).unwrap();
        let block = serialize_refinements(&session, &OptionSet::new());
        assert!(block.text.contains("\"value\": \"I am a beginner with limited knowledge\""));
        let back = parse_option_document(&block.text, Origin::UserJson).unwrap();
        assert_eq!(back.labels(), vec!["Expertise Level"]);
    }

    #[test]
    fn inline_shadows_session() {
        let session = OptionSet::from_options(vec![expertise()]).unwrap();
        let inline = OptionSet::from_options(vec![
            PromptOption::radio("expertise level", "", &[("a", "b")], "b", "").unwrap(),
        ])
        .unwrap();
        let block = serialize_refinements(&session, &inline);
        assert_eq!(block.included_labels, vec!["expertise level"]);
        assert_eq!(block.dropped_session_labels, vec!["Expertise Level"]);
    }

    #[test]
    fn frames_appear_once() {
        let session = OptionSet::from_options(vec![expertise()]).unwrap();
        let block = serialize_refinements(&session, &OptionSet::new());
        let prompt = assemble_chat_prompt(&[], "Explain", &block).unwrap();
        assert_eq!(prompt.system_text.matches(START_FRAME).count(), 1);
        assert_eq!(prompt.system_text.matches(END_FRAME).count(), 1);
        assert_eq!(extract_refinement_payload(&prompt.system_text), Some(block.text.as_str()));
    }

    #[test]
    fn empty_user_message_rejected() {
        let block = serialize_refinements(&OptionSet::new(), &OptionSet::new());
        assert_eq!(assemble_chat_prompt(&[], "  ", &block), Err(PromptError::EmptyUserMessage));
    }

    #[test]
    fn history_messages_in_order() {
        let history = vec![
            Exchange {
                user: "q1".into(),
                assistant: Some("a1".into()),
            },
            Exchange {
                user: "q2".into(),
                assistant: None,
            },
        ];
        let block = serialize_refinements(&OptionSet::new(), &OptionSet::new());
        let p = assemble_chat_prompt(&history, "q3", &block).unwrap();
        let roles: Vec<_> = p.messages.iter().map(|m| (m.role, m.content.as_str())).collect();
        assert_eq!(
            roles,
            vec![(Role::User, "q1"), (Role::Assistant, "a1"), (Role::User, "q2"), (Role::User, "q3")]
        );
    }

    #[test]
    fn option_prompt_interpolates() {
        let text = assemble_option_prompt(&[], "Explain the formula: =INDEX(...)", &OptionSet::new());
        assert!(text.contains("DO NOT GENERATE REDUNDANT options"));
        assert!(text.contains("<conversation_history>\nUser: Explain the formula: =INDEX(...)\n</conversation_history>"));
        assert!(text.contains("<options>\n[]\n</options>"));
        assert!(!text.contains("${"));
    }

    #[test]
    fn transcript_keeps_recent_turns() {
        let history: Vec<Exchange> = (0..30)
            .map(|i| Exchange {
                user: format!("q{i}"),
                assistant: Some(format!("a{i}")),
            })
            .collect();
        let t = render_transcript(&history, "latest");
        assert!(!t.contains("User: q9\n"));
        assert!(t.starts_with("User: q10\n"));
        assert!(t.ends_with("User: latest"));
    }

    #[test]
    fn template_leaves_unknown_syntax_alone() {
        let t = Template::parse("a ${x} b ${ not a var } ${y}");
        assert_eq!(t.variables(), vec!["x", "y"]);
        let out = t
            .render(&HashMap::from([("x", "${y}".to_string()), ("y", "2".to_string())]))
            .unwrap();
        assert_eq!(out, "a ${y} b ${ not a var } 2");
        assert_eq!(
            t.render(&HashMap::new()),
            Err(PromptError::MissingVariable("x".into()))
        );
    }

    #[test]
    fn option_template_has_two_placeholders() {
        assert_eq!(option_template().variables(), vec!["currentContent", "currentOptions"]);
    }
}
