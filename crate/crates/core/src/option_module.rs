//! Option generation: grounding → option prompt → streamed, decoded, and
//! rule-checked prompt options.
//!
//! [`OptionGeneration`] is the per-request state machine. It is driven either
//! by [`generate_options`] against a [`CompletionBackend`], or chunk by chunk
//! by the session engine.

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendConfig, CompletionBackend, CompletionRequest, GatewayError};
use crate::decoder::{DecodeError, DecodeEvent, DecodedBatch, Decoder};
use crate::options::{merge_dedupe, ControlValue, OptionSet, Origin, ValidationError};
use crate::prompt::{assemble_option_prompt, ChatMessage, Exchange};

/// Upper bound on controls accepted from one generation.
pub const MAX_CONTROLS: usize = 5;
/// Fewer inline controls than this is reported, never retried.
pub const ADVISORY_MIN_INLINE: usize = 3;
/// Total backend calls allowed per request (first try plus one retry).
pub const MAX_ATTEMPTS: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationKind {
    Inline,
    Session,
}

impl GenerationKind {
    fn origin(self) -> Origin {
        match self {
            GenerationKind::Inline => Origin::GeneratedInline,
            GenerationKind::Session => Origin::GeneratedSession,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum GenerationError {
    #[error("generation input is empty")]
    EmptyInput,
    #[error("backend failed: {0}")]
    Backend(GatewayError),
    #[error("option document could not be decoded: {0}")]
    DecodeFailed(String),
    #[error("generation was cancelled")]
    Cancelled,
}

impl GenerationError {
    pub fn name(&self) -> &'static str {
        match self {
            GenerationError::EmptyInput => "EmptyInput",
            GenerationError::Backend(_) => "BackendError",
            GenerationError::DecodeFailed(_) => "DecodeFailed",
            GenerationError::Cancelled => "Cancelled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub kind: GenerationKind,
    pub history: Vec<Exchange>,
    /// The user's prompt (inline) or natural-language utterance (session).
    pub input: String,
    /// Options the new ones must not duplicate.
    pub existing: OptionSet,
    pub request_id: u64,
}

impl GenerationRequest {
    pub fn inline(
        history: Vec<Exchange>,
        input: impl Into<String>,
        existing: OptionSet,
        request_id: u64,
    ) -> Result<Self, GenerationError> {
        Self::build(GenerationKind::Inline, history, input.into(), existing, request_id)
    }

    pub fn session(
        history: Vec<Exchange>,
        utterance: impl Into<String>,
        existing: OptionSet,
        request_id: u64,
    ) -> Result<Self, GenerationError> {
        Self::build(GenerationKind::Session, history, utterance.into(), existing, request_id)
    }

    fn build(
        kind: GenerationKind,
        history: Vec<Exchange>,
        input: String,
        existing: OptionSet,
        request_id: u64,
    ) -> Result<Self, GenerationError> {
        if input.trim().is_empty() {
            return Err(GenerationError::EmptyInput);
        }
        Ok(GenerationRequest {
            kind,
            history,
            input,
            existing,
            request_id,
        })
    }

    pub fn prompt(&self) -> String {
        assemble_option_prompt(&self.history, &self.input, &self.existing)
    }

    pub fn completion_request(&self, config: &BackendConfig, sequence: u64) -> CompletionRequest {
        CompletionRequest::new(config, self.prompt(), vec![ChatMessage::user(&self.input)], sequence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationWarning {
    Truncated { dropped: usize },
    DuplicateDropped { label: String },
    NonCanonicalValue { label: String },
    Rejected { index: usize, label: Option<String>, error: String },
    UnderGenerated { count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenerationOutcome {
    pub accepted: OptionSet,
    pub warnings: Vec<GenerationWarning>,
    /// Full completion text of the last attempt.
    pub raw_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<GenerationError>,
}

impl GenerationOutcome {
    pub fn failed(error: GenerationError, raw_text: String) -> Self {
        GenerationOutcome {
            accepted: OptionSet::new(),
            warnings: Vec::new(),
            raw_text,
            error: Some(error),
        }
    }
}

/// Applies the generation rules to a decoded batch: invalid controls are
/// rejected one by one, duplicates of `grounding` (or of earlier controls in
/// the batch) are dropped, and at most [`MAX_CONTROLS`] are kept.
pub fn enforce_generation_rules(raw: DecodedBatch, grounding: &OptionSet, kind: GenerationKind) -> GenerationOutcome {
    let mut warnings = Vec::new();
    for r in &raw.rejected {
        warnings.push(GenerationWarning::Rejected {
            index: r.index,
            label: r.label.clone(),
            error: r.error.to_string(),
        });
    }

    let mut fresh = OptionSet::new();
    for option in raw.options {
        let missing_value = matches!(option.as_choice().map(|c| c.value()), Some(ControlValue::Single(s)) if s.is_empty());
        if missing_value {
            warnings.push(GenerationWarning::Rejected {
                index: fresh.len(),
                label: Some(option.label().to_string()),
                error: ValidationError::EmptyValue.to_string(),
            });
            continue;
        }
        if fresh.contains_label(option.label()) {
            warnings.push(GenerationWarning::DuplicateDropped {
                label: option.label().to_string(),
            });
            continue;
        }
        fresh.push(option).expect("label checked above");
    }

    let (merged, dropped) = merge_dedupe(grounding, &fresh);
    warnings.extend(
        dropped
            .into_iter()
            .map(|d| GenerationWarning::DuplicateDropped { label: d.label }),
    );
    let mut kept: Vec<_> = merged.into_vec().split_off(grounding.len());
    if kept.len() > MAX_CONTROLS {
        let dropped = kept.len() - MAX_CONTROLS;
        kept.truncate(MAX_CONTROLS);
        warnings.push(GenerationWarning::Truncated { dropped });
    }
    for option in &kept {
        if option.non_canonical {
            warnings.push(GenerationWarning::NonCanonicalValue {
                label: option.label().to_string(),
            });
        }
    }
    if kind == GenerationKind::Inline && kept.len() < ADVISORY_MIN_INLINE {
        warnings.push(GenerationWarning::UnderGenerated { count: kept.len() });
    }
    let accepted = OptionSet::from_options(kept).expect("labels are unique after dedupe");
    GenerationOutcome {
        accepted,
        warnings,
        raw_text: String::new(),
        error: None,
    }
}

/// What the driver should do after an input.
#[derive(Debug, Clone, PartialEq)]
pub enum GenerationStep {
    /// Keep streaming.
    Continue,
    /// Cancel the current call (if still open) and issue the same request again.
    Retry { error: DecodeError },
    Done(GenerationOutcome),
}

#[derive(Debug)]
pub struct OptionGeneration {
    request: GenerationRequest,
    decoder: Decoder,
    raw_text: String,
    attempt: u8,
}

impl OptionGeneration {
    pub fn new(request: GenerationRequest) -> Self {
        let decoder = Decoder::new(request.kind.origin());
        OptionGeneration {
            request,
            decoder,
            raw_text: String::new(),
            attempt: 1,
        }
    }

    pub fn request(&self) -> &GenerationRequest {
        &self.request
    }

    pub fn attempt(&self) -> u8 {
        self.attempt
    }

    pub fn on_chunk(&mut self, chunk: &str) -> (Vec<DecodeEvent>, GenerationStep) {
        self.raw_text.push_str(chunk);
        let events = match self.decoder.feed(chunk.as_bytes()) {
            Ok(events) => events,
            // already failed; the driver should have stopped the call
            Err(error) => return (Vec::new(), self.decode_failure(error)),
        };
        let failed = events.iter().find_map(|e| match e {
            DecodeEvent::DecodeError { error } => Some(error.clone()),
            _ => None,
        });
        let step = match failed {
            Some(error) => self.decode_failure(error),
            None => GenerationStep::Continue,
        };
        (events, step)
    }

    pub fn on_finished(&mut self, result: Result<(), GatewayError>) -> GenerationStep {
        if let Err(e) = result {
            return GenerationStep::Done(GenerationOutcome::failed(
                GenerationError::Backend(e),
                std::mem::take(&mut self.raw_text),
            ));
        }
        match self.decoder.batch() {
            Ok(batch) => {
                let mut outcome = enforce_generation_rules(batch, &self.request.existing, self.request.kind);
                outcome.raw_text = std::mem::take(&mut self.raw_text);
                GenerationStep::Done(outcome)
            }
            Err(error) => self.decode_failure(error),
        }
    }

    fn decode_failure(&mut self, error: DecodeError) -> GenerationStep {
        if self.attempt < MAX_ATTEMPTS {
            self.attempt += 1;
            self.decoder = Decoder::new(self.request.kind.origin());
            self.raw_text.clear();
            GenerationStep::Retry { error }
        } else {
            GenerationStep::Done(GenerationOutcome::failed(
                GenerationError::DecodeFailed(error.to_string()),
                std::mem::take(&mut self.raw_text),
            ))
        }
    }
}

/// Runs one generation against `backend`, reporting decode events as they
/// happen. Retries once on a decode failure.
pub async fn generate_options(
    backend: &dyn CompletionBackend,
    config: &BackendConfig,
    request: GenerationRequest,
    mut on_event: impl FnMut(&DecodeEvent),
) -> GenerationOutcome {
    let mut generation = OptionGeneration::new(request);
    let mut sequence = 1;
    'attempts: loop {
        let req = generation.request().completion_request(config, sequence);
        sequence += 1;
        let mut stream = match backend.stream_completion(req).await {
            Ok(s) => s,
            Err(e) => return GenerationOutcome::failed(GenerationError::Backend(e), String::new()),
        };
        let result = loop {
            match stream.next().await {
                Some(Ok(chunk)) => {
                    let (events, step) = generation.on_chunk(&chunk);
                    events.iter().for_each(&mut on_event);
                    match step {
                        GenerationStep::Continue => {}
                        GenerationStep::Retry { .. } => continue 'attempts,
                        GenerationStep::Done(outcome) => return outcome,
                    }
                }
                Some(Err(e)) => break Err(e),
                None => break Ok(()),
            }
        };
        match generation.on_finished(result) {
            GenerationStep::Retry { .. } => continue,
            GenerationStep::Done(outcome) => return outcome,
            GenerationStep::Continue => unreachable!("finished call cannot continue"),
        }
    }
}

pub async fn generate_inline_options(
    backend: &dyn CompletionBackend,
    config: &BackendConfig,
    request: GenerationRequest,
    on_event: impl FnMut(&DecodeEvent),
) -> GenerationOutcome {
    debug_assert_eq!(request.kind, GenerationKind::Inline);
    generate_options(backend, config, request, on_event).await
}

pub async fn generate_session_options(
    backend: &dyn CompletionBackend,
    config: &BackendConfig,
    request: GenerationRequest,
    on_event: impl FnMut(&DecodeEvent),
) -> GenerationOutcome {
    debug_assert_eq!(request.kind, GenerationKind::Session);
    generate_options(backend, config, request, on_event).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::RejectedOption;
    use crate::options::PromptOption;

    fn radio(label: &str) -> PromptOption {
        PromptOption::radio(label, "", &[("a", "Choice a"), ("b", "Choice b")], "Choice a", "").unwrap()
    }

    #[test]
    fn duplicates_of_grounding_are_dropped() {
        let grounding = OptionSet::from_options(vec![radio("A"), radio("B")]).unwrap();
        let raw = DecodedBatch {
            options: vec![radio("a"), radio("b ")],
            rejected: vec![],
        };
        let out = enforce_generation_rules(raw, &grounding, GenerationKind::Session);
        assert!(out.accepted.is_empty());
        assert_eq!(
            out.warnings,
            vec![
                GenerationWarning::DuplicateDropped { label: "a".into() },
                GenerationWarning::DuplicateDropped { label: "b ".into() }
            ]
        );
    }

    #[test]
    fn three_fresh_controls_pass_untouched() {
        let raw = DecodedBatch {
            options: vec![radio("A"), radio("B"), radio("C")],
            rejected: vec![],
        };
        let out = enforce_generation_rules(raw.clone(), &OptionSet::new(), GenerationKind::Inline);
        assert_eq!(out.accepted.into_vec(), raw.options);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn over_generation_truncates() {
        let raw = DecodedBatch {
            options: (0..7).map(|i| radio(&format!("C{i}"))).collect(),
            rejected: vec![],
        };
        let out = enforce_generation_rules(raw, &OptionSet::new(), GenerationKind::Inline);
        assert_eq!(out.accepted.labels(), vec!["C0", "C1", "C2", "C3", "C4"]);
        assert_eq!(out.warnings, vec![GenerationWarning::Truncated { dropped: 2 }]);
    }

    #[test]
    fn rejected_and_non_canonical_become_warnings() {
        let para = serde_json::json!({
            "type": "option", "label": "P", "options": {"x": "Do x"},
            "appearance": "single-select-radio", "value": "do x please"
        });
        let para = crate::options::validate_option(&para, Origin::GeneratedInline).unwrap();
        let raw = DecodedBatch {
            options: vec![para],
            rejected: vec![RejectedOption {
                index: 1,
                label: Some("Q".into()),
                error: ValidationError::EmptyValue,
            }],
        };
        let out = enforce_generation_rules(raw, &OptionSet::new(), GenerationKind::Session);
        assert_eq!(out.accepted.len(), 1);
        assert!(out.accepted.get("P").unwrap().non_canonical);
        assert!(matches!(out.warnings[0], GenerationWarning::Rejected { index: 1, .. }));
        assert_eq!(out.warnings[1], GenerationWarning::NonCanonicalValue { label: "P".into() });
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(
            GenerationRequest::session(vec![], "  ", OptionSet::new(), 1),
            Err(GenerationError::EmptyInput)
        );
    }

    #[test]
    fn machine_retries_once_then_fails() {
        let req = GenerationRequest::inline(vec![], "hi", OptionSet::new(), 1).unwrap();
        let mut g = OptionGeneration::new(req);
        assert!(matches!(g.on_finished(Ok(())), GenerationStep::Retry { .. }));
        let (_, step) = g.on_chunk("not json");
        assert_eq!(step, GenerationStep::Continue);
        match g.on_finished(Ok(())) {
            GenerationStep::Done(o) => {
                assert!(matches!(o.error, Some(GenerationError::DecodeFailed(_))));
                assert!(o.accepted.is_empty());
                assert_eq!(o.raw_text, "not json");
            }
            other => panic!("{other:?}"),
        }
    }
}
