//! The reactive session engine, without I/O.
//!
//! [`SessionMachine`] owns one [`SessionState`] and reacts to four kinds of
//! input: client commands, chunks of a backend call, the end of a backend call,
//! and timer expiry. It answers with [`Effect`]s that a driver carries out
//! (start or cancel a call, arm a timer, publish an event). The tokio service
//! and the virtual-clock harness are two such drivers.
//!
//! Every published event bumps the session revision, so the revision doubles
//! as the event id.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{BackendConfig, CompletionRequest, GatewayError};
use crate::chat::{ChatGeneration, ChatRequest, RegenCause};
use crate::decoder::DecodeEvent;
use crate::events::{EventKind, StreamEvent};
use crate::option_module::{GenerationKind, GenerationOutcome, GenerationRequest, GenerationStep, OptionGeneration};
use crate::options::{encode_options, option_to_value, ControlValue, OptionSet};
use crate::session::{Mode, SessionError, SessionState, Tier, TurnStatus};

pub const DEFAULT_DEBOUNCE_MS: u64 = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub debounce_ms: u64,
    pub backend: BackendConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            debounce_ms: DEFAULT_DEBOUNCE_MS,
            backend: BackendConfig::default(),
        }
    }
}

/// A client action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Command {
    Submit { text: String },
    SetInline { turn: u64, label: String, value: ControlValue },
    SetSession { label: String, value: ControlValue },
    Pin { turn: u64, label: String },
    Unpin { label: String },
    Delete { tier: Tier, label: String },
    RequestControls { utterance: String },
    Import { json: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CommandReply {
    pub revision: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "purpose", rename_all = "snake_case")]
pub enum CallPurpose {
    InlineOptions { turn: u64 },
    SessionOptions,
    Chat { turn: u64, cause: RegenCause },
}

impl CallPurpose {
    pub fn is_option_generation(self) -> bool {
        !matches!(self, CallPurpose::Chat { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    StartCall {
        call: u64,
        purpose: CallPurpose,
        request: CompletionRequest,
    },
    CancelCall {
        call: u64,
    },
    ArmTimer {
        timer: u64,
        after_ms: u64,
    },
    Emit(StreamEvent),
}

#[derive(Debug)]
struct OptionJob {
    call: u64,
    generation: OptionGeneration,
}

#[derive(Debug)]
struct ChatJob {
    call: u64,
    turn: u64,
    cause: RegenCause,
    included: Vec<String>,
    generation: ChatGeneration,
}

#[derive(Debug, Clone, Copy)]
struct PendingRegen {
    timer: u64,
    cause: RegenCause,
}

#[derive(Debug)]
pub struct SessionMachine {
    state: SessionState,
    config: EngineConfig,
    next_call: u64,
    next_timer: u64,
    inline: Option<(u64, OptionJob)>,
    session_generation: Option<OptionJob>,
    chat: Option<ChatJob>,
    pending: Option<PendingRegen>,
    effects: Vec<Effect>,
}

fn options_value(set: &OptionSet) -> Value {
    serde_json::from_str(&encode_options(set)).expect("canonical encoding is JSON")
}

impl SessionMachine {
    pub fn new(id: impl Into<String>, mode: Mode, config: EngineConfig) -> Self {
        Self::restore(SessionState::new(id, mode), config)
    }

    /// Resumes from a stored state. In-flight work is not resumed.
    pub fn restore(mut state: SessionState, config: EngineConfig) -> Self {
        state.collapse_in_flight();
        SessionMachine {
            state,
            config,
            next_call: 1,
            next_timer: 1,
            inline: None,
            session_generation: None,
            chat: None,
            pending: None,
            effects: Vec::new(),
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn take_effects(&mut self) -> Vec<Effect> {
        std::mem::take(&mut self.effects)
    }

    /// A new prompt would be refused with `Busy`.
    pub fn is_busy(&self) -> bool {
        self.state.is_busy() || self.inline.is_some() || self.chat.is_some() || self.pending.is_some()
    }

    /// No call in flight and no regeneration pending.
    pub fn is_quiescent(&self) -> bool {
        self.inline.is_none() && self.session_generation.is_none() && self.chat.is_none() && self.pending.is_none()
    }

    pub fn in_flight_calls(&self) -> Vec<u64> {
        let mut calls: Vec<u64> = self
            .inline
            .iter()
            .map(|(_, j)| j.call)
            .chain(self.session_generation.iter().map(|j| j.call))
            .chain(self.chat.iter().map(|j| j.call))
            .collect();
        calls.sort_unstable();
        calls
    }

    pub fn command(&mut self, command: Command) -> Result<CommandReply, SessionError> {
        let mut turn = None;
        match command {
            Command::Submit { text } => {
                if text.trim().is_empty() {
                    return Err(SessionError::EmptyPrompt);
                }
                if self.is_busy() {
                    return Err(SessionError::Busy);
                }
                let id = self.state.begin_turn(&text)?;
                turn = Some(id);
                let status = self.state.turn(id).expect("just created").status;
                self.emit(EventKind::TurnStarted, Some(id), json!({"text": text, "status": status}));
                match self.state.mode {
                    Mode::Dynamic => {
                        let request = GenerationRequest::inline(
                            self.state.history_before(id),
                            text,
                            self.state.session_options.clone(),
                            id,
                        )
                        .expect("prompt checked non-empty");
                        let job = self.start_generation(OptionGeneration::new(request), CallPurpose::InlineOptions { turn: id });
                        self.inline = Some((id, job));
                    }
                    Mode::Static => self.start_chat(id, RegenCause::Initial),
                }
            }
            Command::SetInline { turn: t, label, value } => {
                let option = self.state.update_inline_option(t, &label, value)?;
                self.emit(
                    EventKind::InlineOptionsChanged,
                    Some(t),
                    json!({"change": "set", "label": label, "option": option_to_value(&option)}),
                );
                self.schedule_regen(RegenCause::OptionChanged);
            }
            Command::SetSession { label, value } => {
                let option = self.state.update_session_option(&label, value)?;
                let options = options_value(&self.state.session_options);
                self.emit(
                    EventKind::SessionOptionsChanged,
                    None,
                    json!({"change": "set", "label": label, "option": option_to_value(&option), "options": options}),
                );
                self.schedule_regen(RegenCause::SessionOptionsChanged);
            }
            Command::Pin { turn: t, label } => {
                self.state.pin_option(t, &label)?;
                self.emit_moved("pin", &label);
                self.schedule_regen(RegenCause::SessionOptionsChanged);
            }
            Command::Unpin { label } => {
                self.state.unpin_option(&label)?;
                self.emit_moved("unpin", &label);
                self.schedule_regen(RegenCause::SessionOptionsChanged);
            }
            Command::Delete { tier, label } => {
                self.state.delete_option(tier, &label)?;
                match tier {
                    Tier::Inline => {
                        let latest = self.state.latest_turn().expect("deleted from latest turn");
                        let (id, options) = (latest.id, options_value(&latest.inline_options));
                        self.emit(
                            EventKind::InlineOptionsChanged,
                            Some(id),
                            json!({"change": "delete", "label": label, "options": options}),
                        );
                        self.schedule_regen(RegenCause::OptionChanged);
                    }
                    Tier::Session => {
                        let options = options_value(&self.state.session_options);
                        self.emit(
                            EventKind::SessionOptionsChanged,
                            None,
                            json!({"change": "delete", "label": label, "options": options}),
                        );
                        self.schedule_regen(RegenCause::SessionOptionsChanged);
                    }
                }
            }
            Command::RequestControls { utterance } => {
                if self.state.mode == Mode::Static {
                    return Err(SessionError::StaticMode);
                }
                if utterance.trim().is_empty() {
                    return Err(SessionError::EmptyUtterance);
                }
                if self.session_generation.is_some() {
                    return Err(SessionError::Busy);
                }
                let request = GenerationRequest::session(
                    self.state.history(),
                    utterance,
                    self.state.session_options.clone(),
                    self.next_call,
                )
                .expect("utterance checked non-empty");
                let job = self.start_generation(OptionGeneration::new(request), CallPurpose::SessionOptions);
                self.session_generation = Some(job);
            }
            Command::Import { json: text } => {
                let previous = self.state.session_options.clone();
                self.state.import_session_options(&text)?;
                if encode_options(&self.state.session_options) == encode_options(&previous) {
                    // same document again: nothing to publish or regenerate
                    self.state.session_options = previous;
                    return Ok(CommandReply {
                        revision: self.state.revision,
                        turn,
                    });
                }
                let options = options_value(&self.state.session_options);
                self.emit(
                    EventKind::SessionOptionsChanged,
                    None,
                    json!({"change": "import", "options": options}),
                );
                self.schedule_regen(RegenCause::SessionOptionsChanged);
            }
        }
        Ok(CommandReply {
            revision: self.state.revision,
            turn,
        })
    }

    pub fn on_chunk(&mut self, call: u64, chunk: &str) {
        if let Some((turn, job)) = self.inline.as_mut().filter(|(_, j)| j.call == call) {
            let turn = *turn;
            let (events, step) = job.generation.on_chunk(chunk);
            self.emit_option_deltas("inline", Some(turn), &events);
            self.option_step(GenerationKind::Inline, call, step, true);
        } else if let Some(job) = self.session_generation.as_mut().filter(|j| j.call == call) {
            let (events, step) = job.generation.on_chunk(chunk);
            self.emit_option_deltas("session", None, &events);
            self.option_step(GenerationKind::Session, call, step, true);
        } else if let Some(job) = self.chat.as_mut().filter(|j| j.call == call) {
            job.generation.push(chunk);
            let turn = job.turn;
            self.emit(EventKind::ChatDelta, Some(turn), json!({"call": call, "text": chunk}));
        }
    }

    pub fn on_call_finished(&mut self, call: u64, result: Result<(), GatewayError>) {
        if let Some((_, job)) = self.inline.as_mut().filter(|(_, j)| j.call == call) {
            let step = job.generation.on_finished(result);
            self.option_step(GenerationKind::Inline, call, step, false);
        } else if let Some(job) = self.session_generation.as_mut().filter(|j| j.call == call) {
            let step = job.generation.on_finished(result);
            self.option_step(GenerationKind::Session, call, step, false);
        } else if self.chat.as_ref().is_some_and(|j| j.call == call) {
            let job = self.chat.take().expect("checked above");
            match result {
                Ok(()) => {
                    let text = job.generation.finish();
                    self.state
                        .complete_response(job.turn, text.clone())
                        .expect("chat turn exists");
                    self.emit(
                        EventKind::ChatComplete,
                        Some(job.turn),
                        json!({"call": call, "cause": job.cause, "text": text, "refinements": job.included}),
                    );
                }
                Err(e) => {
                    self.state
                        .fail_response(job.turn, e.to_string())
                        .expect("chat turn exists");
                    self.emit(
                        EventKind::Error,
                        Some(job.turn),
                        json!({"scope": "chat", "call": call, "code": e.name(), "message": e.to_string()}),
                    );
                }
            }
        }
    }

    pub fn on_timer(&mut self, timer: u64) {
        let Some(pending) = self.pending.filter(|p| p.timer == timer) else {
            return;
        };
        self.pending = None;
        let Some(latest) = self.state.latest_turn().map(|t| t.id) else {
            return;
        };
        let cancelled = self.chat.take().map(|job| {
            self.effects.push(Effect::CancelCall { call: job.call });
            job.call
        });
        let call = self.next_call;
        self.emit(
            EventKind::RegenStarted,
            Some(latest),
            json!({"call": call, "cause": pending.cause, "cancelled": cancelled}),
        );
        self.start_chat(latest, pending.cause);
    }

    fn emit(&mut self, kind: EventKind, turn: Option<u64>, payload: Value) {
        self.state.revision += 1;
        self.effects.push(Effect::Emit(StreamEvent {
            revision: self.state.revision,
            session: self.state.id.clone(),
            turn,
            kind,
            payload,
        }));
    }

    fn emit_moved(&mut self, change: &str, label: &str) {
        let latest = self.state.latest_turn().expect("pin and unpin need a turn");
        let (turn, inline) = (latest.id, options_value(&latest.inline_options));
        let options = options_value(&self.state.session_options);
        self.emit(
            EventKind::SessionOptionsChanged,
            Some(turn),
            json!({"change": change, "label": label, "options": options, "inline_options": inline}),
        );
    }

    fn emit_option_deltas(&mut self, tier: &str, turn: Option<u64>, events: &[DecodeEvent]) {
        for event in events {
            if let DecodeEvent::OptionCompleted { index, option } = event {
                self.emit(
                    EventKind::OptionDelta,
                    turn,
                    json!({"tier": tier, "index": index, "option": option_to_value(option)}),
                );
            }
        }
    }

    fn take_call(&mut self) -> u64 {
        let call = self.next_call;
        self.next_call += 1;
        call
    }

    fn start_generation(&mut self, generation: OptionGeneration, purpose: CallPurpose) -> OptionJob {
        let call = self.take_call();
        let request = generation.request().completion_request(&self.config.backend, call);
        self.effects.push(Effect::StartCall { call, purpose, request });
        OptionJob { call, generation }
    }

    fn option_step(&mut self, kind: GenerationKind, call: u64, step: GenerationStep, call_open: bool) {
        match step {
            GenerationStep::Continue => {}
            GenerationStep::Retry { .. } => {
                if call_open {
                    self.effects.push(Effect::CancelCall { call });
                }
                let new_call = self.take_call();
                let (purpose, job) = match kind {
                    GenerationKind::Inline => {
                        let (turn, job) = self.inline.as_mut().expect("inline job running");
                        (CallPurpose::InlineOptions { turn: *turn }, job)
                    }
                    GenerationKind::Session => (
                        CallPurpose::SessionOptions,
                        self.session_generation.as_mut().expect("session job running"),
                    ),
                };
                job.call = new_call;
                let request = job.generation.request().completion_request(&self.config.backend, new_call);
                self.effects.push(Effect::StartCall {
                    call: new_call,
                    purpose,
                    request,
                });
            }
            GenerationStep::Done(outcome) => {
                if call_open {
                    self.effects.push(Effect::CancelCall { call });
                }
                match kind {
                    GenerationKind::Inline => {
                        let (turn, _) = self.inline.take().expect("inline job running");
                        self.finish_inline(turn, call, outcome);
                    }
                    GenerationKind::Session => {
                        self.session_generation = None;
                        self.finish_session(call, outcome);
                    }
                }
            }
        }
    }

    fn finish_inline(&mut self, turn: u64, call: u64, outcome: GenerationOutcome) {
        if let Some(error) = &outcome.error {
            self.emit(
                EventKind::Error,
                Some(turn),
                json!({"scope": "inline_options", "call": call, "code": error.name(), "message": error.to_string()}),
            );
        }
        self.state
            .set_inline_options(turn, outcome.accepted.clone())
            .expect("turn exists");
        self.state
            .set_status(turn, TurnStatus::GeneratingResponse)
            .expect("turn exists");
        self.emit(
            EventKind::OptionSetComplete,
            Some(turn),
            json!({"tier": "inline", "options": options_value(&outcome.accepted), "warnings": outcome.warnings}),
        );
        self.start_chat(turn, RegenCause::Initial);
    }

    fn finish_session(&mut self, call: u64, outcome: GenerationOutcome) {
        if let Some(error) = &outcome.error {
            self.emit(
                EventKind::Error,
                None,
                json!({"scope": "session_options", "call": call, "code": error.name(), "message": error.to_string()}),
            );
            return;
        }
        let dropped = self.state.add_session_options(&outcome.accepted);
        let added: Vec<String> = outcome
            .accepted
            .labels()
            .into_iter()
            .filter(|l| !dropped.contains(l))
            .collect();
        let options = options_value(&self.state.session_options);
        self.emit(
            EventKind::SessionOptionsChanged,
            None,
            json!({"change": "generated", "added": added, "warnings": outcome.warnings, "options": options}),
        );
        if !added.is_empty() {
            self.schedule_regen(RegenCause::SessionOptionsChanged);
        }
    }

    fn start_chat(&mut self, turn: u64, cause: RegenCause) {
        let request = ChatRequest::build(&self.state, turn, cause).expect("chat starts on the latest turn");
        let call = self.take_call();
        self.effects.push(Effect::StartCall {
            call,
            purpose: CallPurpose::Chat { turn, cause },
            request: request.completion_request(&self.config.backend, call),
        });
        self.chat = Some(ChatJob {
            call,
            turn,
            cause,
            included: request.block.included_labels,
            generation: ChatGeneration::default(),
        });
    }

    /// Arms (or re-arms) the trailing debounce timer for a regeneration of the
    /// latest response. Nothing is scheduled while that turn is still waiting
    /// for its options: its first response will read the current state anyway.
    fn schedule_regen(&mut self, cause: RegenCause) {
        let Some(latest) = self.state.latest_turn().map(|t| t.id) else {
            return;
        };
        if self.inline.as_ref().is_some_and(|(t, _)| *t == latest) {
            return;
        }
        let timer = self.next_timer;
        self.next_timer += 1;
        self.pending = Some(PendingRegen { timer, cause });
        self.effects.push(Effect::ArmTimer {
            timer,
            after_ms: self.config.debounce_ms,
        });
    }
}
