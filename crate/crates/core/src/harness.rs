//! Scenario replay over a virtual clock.
//!
//! A scenario is a JSON-lines file. The first line is a header, every other
//! line is one client action with a virtual timestamp in milliseconds:
//!
//! ```text
//! {"format":"prc-scenario","version":1,"fixture":"formula_walkthrough.fixture.json","mode":"dynamic","chunk_delay_ms":10}
//! {"at":0,"action":"submit","text":"Explain the formula"}
//! {"at":1001,"action":"set_inline","turn":1,"label":"Explanation Detail Level","value":"Advanced"}
//! {"at":1500,"action":"pin","turn":1,"label":"Nope","expect_error":"UnknownLabel"}
//! ```
//!
//! The fixture path is resolved relative to the scenario file. Backend calls
//! consume fixture completions in order; chunk `k` of a call started at `t`
//! arrives at `t + (k + 1) * delay`, and the call ends together with its last
//! chunk. Inputs scheduled for the same instant are processed in the order
//! they were scheduled. A cancelled call stops delivering after the header's
//! `cancel_latency_ms` (default 0).
//!
//! The resulting [`Transcript`] is also JSON lines: a header, one line per
//! action, call start, call cancel and event, then a final snapshot line.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backend::{Fixture, FixtureError, GatewayError};
use crate::engine::{CallPurpose, Command, Effect, EngineConfig, SessionMachine, DEFAULT_DEBOUNCE_MS};
use crate::events::{EventKind, StreamEvent};
use crate::prompt::serialize_refinements;
use crate::session::{Mode, SessionState};

pub const SCENARIO_FORMAT: &str = "prc-scenario";
pub const TRANSCRIPT_FORMAT: &str = "prc-transcript";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CHUNK_DELAY_MS: u64 = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario format: {0}")]
    Format(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("call {call} found no fixture completion left")]
    FixtureExhausted { call: u64 },
    #[error("{remaining} fixture completion(s) were never used")]
    LeftoverFixtures { remaining: usize },
    #[error("step {step} ({action}): {error}")]
    ActionRejected { step: usize, action: String, error: String },
}

impl HarnessError {
    pub fn name(&self) -> &'static str {
        match self {
            HarnessError::Format(_) => "Format",
            HarnessError::Io { .. } => "Io",
            HarnessError::Fixture(_) => "Fixture",
            HarnessError::FixtureExhausted { .. } => "FixtureExhausted",
            HarnessError::LeftoverFixtures { .. } => "LeftoverFixtures",
            HarnessError::ActionRejected { .. } => "ActionRejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub format: String,
    pub version: u32,
    pub fixture: String,
    pub mode: Mode,
    #[serde(default = "default_chunk_delay")]
    pub chunk_delay_ms: u64,
    #[serde(default = "default_debounce")]
    pub debounce_ms: u64,
    #[serde(default = "default_session_id")]
    pub session: String,
    /// How long a cancelled call keeps delivering chunks before it closes.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub cancel_latency_ms: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

fn default_chunk_delay() -> u64 {
    DEFAULT_CHUNK_DELAY_MS
}

fn default_debounce() -> u64 {
    DEFAULT_DEBOUNCE_MS
}

fn default_session_id() -> String {
    "s1".into()
}

impl ScenarioHeader {
    pub fn new(fixture: impl Into<String>, mode: Mode) -> Self {
        ScenarioHeader {
            format: SCENARIO_FORMAT.into(),
            version: FORMAT_VERSION,
            fixture: fixture.into(),
            mode,
            chunk_delay_ms: DEFAULT_CHUNK_DELAY_MS,
            debounce_ms: DEFAULT_DEBOUNCE_MS,
            session: default_session_id(),
            cancel_latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub at: u64,
    #[serde(flatten)]
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_error: Option<String>,
}

impl Step {
    pub fn at(at: u64, command: Command) -> Self {
        Step {
            at,
            command,
            expect_error: None,
        }
    }

    pub fn expecting(mut self, error: impl Into<String>) -> Self {
        self.expect_error = Some(error.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub header: ScenarioHeader,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with("//"));
        let (_, first) = lines.next().ok_or_else(|| HarnessError::Format("empty scenario".into()))?;
        let header: ScenarioHeader =
            serde_json::from_str(first).map_err(|e| HarnessError::Format(format!("header: {e}")))?;
        if header.format != SCENARIO_FORMAT || header.version != FORMAT_VERSION {
            return Err(HarnessError::Format(format!(
                "expected {SCENARIO_FORMAT} v{FORMAT_VERSION}, got {} v{}",
                header.format, header.version
            )));
        }
        let mut steps = Vec::new();
        for (n, line) in lines {
            let step: Step =
                serde_json::from_str(line).map_err(|e| HarnessError::Format(format!("line {}: {e}", n + 1)))?;
            if steps.last().is_some_and(|prev: &Step| prev.at > step.at) {
                return Err(HarnessError::Format(format!("line {}: timestamps go backwards", n + 1)));
            }
            steps.push(step);
        }
        Ok(Scenario { header, steps })
    }

    pub fn to_text(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            debounce_ms: self.header.debounce_ms,
            ..EngineConfig::default()
        }
    }
}

/// A scenario file together with the fixture it names.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub path: PathBuf,
    pub scenario: Scenario,
    pub fixture: Fixture,
}

impl LoadedScenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let scenario = Scenario::parse(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let fixture = Fixture::load(&dir.join(&scenario.header.fixture))?;
        Ok(LoadedScenario {
            path: path.to_path_buf(),
            scenario,
            fixture,
        })
    }

    pub fn run(&self) -> Result<Transcript, HarnessError> {
        run_scenario(&self.scenario, &self.fixture)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Entry {
    Action {
        t: u64,
        step: usize,
        action: Command,
        result: Value,
    },
    CallStarted {
        t: u64,
        call: u64,
        #[serde(flatten)]
        purpose: CallPurpose,
    },
    CallCancelled {
        t: u64,
        cancel: u64,
    },
    Event {
        t: u64,
        event: StreamEvent,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub scenario: String,
    pub entries: Vec<Entry>,
    pub snapshot: SessionState,
}

impl Transcript {
    pub fn events(&self) -> impl Iterator<Item = &StreamEvent> {
        self.entries.iter().filter_map(|e| match e {
            Entry::Event { event, .. } => Some(event),
            _ => None,
        })
    }

    /// Timestamped events, as a client subscribed from the start would see them.
    pub fn timed_events(&self) -> Vec<(u64, &StreamEvent)> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                Entry::Event { t, event } => Some((*t, event)),
                _ => None,
            })
            .collect()
    }

    pub fn calls(&self) -> Vec<(u64, CallPurpose)> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                Entry::CallStarted { call, purpose, .. } => Some((*call, *purpose)),
                _ => None,
            })
            .collect()
    }

    pub fn cancelled_calls(&self) -> Vec<u64> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                Entry::CallCancelled { cancel, .. } => Some(*cancel),
                _ => None,
            })
            .collect()
    }

    /// Chat calls started, whether or not they survived.
    pub fn chat_generations(&self) -> usize {
        self.calls().iter().filter(|(_, p)| !p.is_option_generation()).count()
    }

    pub fn option_generation_calls(&self) -> usize {
        self.calls().iter().filter(|(_, p)| p.is_option_generation()).count()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events().filter(|e| e.kind == kind).count()
    }

    /// Refinement block text for the final snapshot.
    pub fn final_refinement_block(&self) -> String {
        self.snapshot.refinement_block().text
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header = json!({"format": TRANSCRIPT_FORMAT, "version": FORMAT_VERSION, "scenario": self.scenario});
        writeln!(out, "{header}").expect("string write");
        for entry in &self.entries {
            writeln!(out, "{}", serde_json::to_string(entry).expect("entry serializes")).expect("string write");
        }
        let empty = crate::options::OptionSet::new();
        let inline = self.snapshot.latest_turn().map_or(&empty, |t| &t.inline_options);
        let block = serialize_refinements(&self.snapshot.session_options, inline);
        let last = json!({"snapshot": self.snapshot, "refinements": block.text});
        writeln!(out, "{last}").expect("string write");
        out
    }
}

#[derive(Debug, Clone)]
enum Input {
    Action(usize),
    Chunk { call: u64, text: String },
    Finished { call: u64, result: Result<(), GatewayError> },
    Timer(u64),
}

/// Discrete-event queue ordered by (time, insertion order).
struct Clock {
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    inputs: std::collections::HashMap<u64, Input>,
}

impl Clock {
    fn new() -> Self {
        Clock {
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            inputs: Default::default(),
        }
    }

    fn schedule(&mut self, at: u64, input: Input) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq)));
        self.inputs.insert(self.seq, input);
    }

    fn pop(&mut self) -> Option<Input> {
        let Reverse((at, seq)) = self.heap.pop()?;
        self.now = at;
        self.inputs.remove(&seq)
    }
}

/// Runs `scenario` against `fixture` and returns the transcript.
pub fn run_scenario(scenario: &Scenario, fixture: &Fixture) -> Result<Transcript, HarnessError> {
    let header = &scenario.header;
    let mut machine = SessionMachine::new(header.session.clone(), header.mode, scenario.engine_config());
    let mut clock = Clock::new();
    let mut entries = Vec::new();
    let mut cursor = 0usize;
    // call -> time from which its inputs are dropped
    let mut cancelled = BTreeMap::new();

    for (i, step) in scenario.steps.iter().enumerate() {
        clock.schedule(step.at, Input::Action(i));
    }

    while let Some(input) = clock.pop() {
        let now = clock.now;
        match input {
            Input::Action(i) => {
                let step = &scenario.steps[i];
                let result = machine.command(step.command.clone());
                let action_name = serde_json::to_value(&step.command).expect("command serializes")["action"]
                    .as_str()
                    .unwrap_or_default()
                    .to_string();
                let result_value = match (&result, &step.expect_error) {
                    (Ok(reply), None) => serde_json::to_value(reply).expect("reply serializes"),
                    (Err(e), Some(expected)) if e.name() == expected => json!({"error": e.name()}),
                    (Err(e), _) => {
                        return Err(HarnessError::ActionRejected {
                            step: i,
                            action: action_name,
                            error: format!("{}: {e}", e.name()),
                        })
                    }
                    (Ok(_), Some(expected)) => {
                        return Err(HarnessError::ActionRejected {
                            step: i,
                            action: action_name,
                            error: format!("expected {expected}, but the action succeeded"),
                        })
                    }
                };
                entries.push(Entry::Action {
                    t: now,
                    step: i,
                    action: step.command.clone(),
                    result: result_value,
                });
            }
            Input::Chunk { call, text } => {
                if cancelled.get(&call).is_none_or(|&at| now < at) {
                    machine.on_chunk(call, &text);
                }
            }
            Input::Finished { call, result } => {
                if cancelled.get(&call).is_none_or(|&at| now < at) {
                    machine.on_call_finished(call, result);
                }
            }
            Input::Timer(timer) => machine.on_timer(timer),
        }

        for effect in machine.take_effects() {
            match effect {
                Effect::StartCall { call, purpose, .. } => {
                    entries.push(Entry::CallStarted { t: now, call, purpose });
                    let completion = fixture
                        .completions
                        .get(cursor)
                        .ok_or(HarnessError::FixtureExhausted { call })?;
                    cursor += 1;
                    let delay = completion.chunk_delay_ms.unwrap_or(header.chunk_delay_ms);
                    let outcomes = completion.outcomes();
                    let mut end = now;
                    let mut failed = false;
                    for (k, outcome) in outcomes.into_iter().enumerate() {
                        end = now + delay * (k as u64 + 1);
                        match outcome {
                            Ok(text) => clock.schedule(end, Input::Chunk { call, text }),
                            Err(e) => {
                                clock.schedule(end, Input::Finished { call, result: Err(e) });
                                failed = true;
                            }
                        }
                    }
                    if !failed {
                        clock.schedule(end, Input::Finished { call, result: Ok(()) });
                    }
                }
                Effect::CancelCall { call } => {
                    cancelled.entry(call).or_insert(now + header.cancel_latency_ms);
                    entries.push(Entry::CallCancelled { t: now, cancel: call });
                }
                Effect::ArmTimer { timer, after_ms } => clock.schedule(now + after_ms, Input::Timer(timer)),
                Effect::Emit(event) => entries.push(Entry::Event { t: now, event }),
            }
        }
    }

    let remaining = fixture.completions.len() - cursor;
    if remaining > 0 {
        return Err(HarnessError::LeftoverFixtures { remaining });
    }
    Ok(Transcript {
        scenario: fixture.scenario.clone(),
        entries,
        snapshot: machine.state().clone(),
    })
}

/// First differing line between a transcript and its golden file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transcript differs from golden at line {line}:\n  golden: {expected}\n  actual: {actual}")]
pub struct GoldenMismatch {
    pub line: usize,
    pub expected: String,
    pub actual: String,
}

pub fn diff_golden(golden: &str, actual: &str) -> Result<(), GoldenMismatch> {
    if golden == actual {
        return Ok(());
    }
    let mut g = golden.lines();
    let mut a = actual.lines();
    let mut line = 1;
    loop {
        match (g.next(), a.next()) {
            (Some(x), Some(y)) if x == y => line += 1,
            (x, y) => {
                return Err(GoldenMismatch {
                    line,
                    expected: x.unwrap_or("<end of file>").to_string(),
                    actual: y.unwrap_or("<end of file>").to_string(),
                })
            }
        }
    }
}
