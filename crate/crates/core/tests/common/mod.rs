#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::PathBuf;

use prc_core::decoder::{DecodeError, Decoder};
use prc_core::engine::{CallPurpose, Command, Effect, EngineConfig, SessionMachine};
use prc_core::events::StreamEvent;
use prc_core::options::{
    encode_options, normalize_label, parse_option_document, OptionSet, Origin, ParseError, PromptOption,
    ValidationError,
};
use prc_core::session::{Mode, Tier, TurnStatus};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn crate_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

/// Every option document in the fixture corpus, sorted by file name.
pub fn corpus() -> Vec<(String, String)> {
    let mut docs: Vec<(String, String)> = std::fs::read_dir(crate_path("fixtures/documents"))
        .expect("corpus directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&p).expect("corpus file"))
        })
        .collect();
    docs.sort();
    docs
}

/// Result of reading a document, comparable between the batch parser and the
/// streaming decoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Set(OptionSet),
    Invalid { index: usize, error: ValidationError },
    Malformed,
}

pub fn batch_outcome(text: &str) -> Outcome {
    match parse_option_document(text, Origin::GeneratedInline) {
        Ok(set) => Outcome::Set(set),
        Err(ParseError::Invalid { index, source }) => Outcome::Invalid { index, error: source },
        Err(ParseError::Syntax { .. }) => Outcome::Malformed,
    }
}

pub fn streamed_outcome<'a>(chunks: impl IntoIterator<Item = &'a [u8]>) -> Outcome {
    let mut d = Decoder::new(Origin::GeneratedInline);
    for chunk in chunks {
        if d.feed(chunk).is_err() {
            break;
        }
    }
    match d.finalize() {
        Ok(set) => Outcome::Set(set),
        Err(DecodeError::Invalid { index, error }) => Outcome::Invalid { index, error },
        Err(_) => Outcome::Malformed,
    }
}

/// Splits `bytes` at the given sorted cut points.
pub fn split_at<'a>(bytes: &'a [u8], cuts: &[usize]) -> Vec<&'a [u8]> {
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for &c in cuts {
        out.push(&bytes[start..c]);
        start = c;
    }
    out.push(&bytes[start..]);
    out
}

// ---- strategies ----

fn text_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 ,.!?-]{0,24}",
        "\\PC{0,12}",
        Just("quote \" backslash \\ newline \n tab \t".to_string()),
        Just("emoji 😀 and 日本語".to_string()),
    ]
}

fn nonempty_text() -> impl Strategy<Value = String> {
    text_strategy().prop_filter("needs a visible character", |s| !s.trim().is_empty())
}

fn choices_strategy() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::btree_map(nonempty_text(), nonempty_text(), 1..5)
        .prop_map(|m| m.into_iter().collect::<Vec<_>>())
}

fn option_strategy() -> impl Strategy<Value = PromptOption> {
    let radio = (nonempty_text(), text_strategy(), choices_strategy(), text_strategy(), any::<prop::sample::Index>())
        .prop_map(|(label, desc, choices, reason, pick)| {
            let pairs: Vec<(&str, &str)> = choices.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let value = pairs[pick.index(pairs.len())].1;
            PromptOption::radio(&label, &desc, &pairs, value, &reason).expect("valid radio")
        });
    let checkbox = (nonempty_text(), text_strategy(), choices_strategy(), text_strategy(), any::<u8>()).prop_map(
        |(label, desc, choices, reason, mask)| {
            let pairs: Vec<(&str, &str)> = choices.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let values: Vec<&str> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, p)| p.1)
                .collect();
            PromptOption::checkbox(&label, &desc, &pairs, &values, &reason).expect("valid checkbox")
        },
    );
    let text = (nonempty_text(), text_strategy(), text_strategy(), text_strategy())
        .prop_map(|(label, desc, value, reason)| PromptOption::text(&label, &desc, &value, &reason).expect("valid text"));
    prop_oneof![radio, checkbox, text]
}

/// Valid option sets with unique normalized labels.
pub fn option_set_strategy() -> impl Strategy<Value = OptionSet> {
    prop::collection::vec(option_strategy(), 0..7).prop_map(|options| {
        let mut set = OptionSet::new();
        for o in options {
            if !set.contains_label(o.label()) {
                set.push(o).expect("label unique");
            }
        }
        set
    })
}

// ---- random operation sequences over the engine ----

const LABELS: &[&str] = &["Depth", "depth ", "Tone", "Format", "Examples", "Audience"];

pub fn small_option(label: &str, rng: &mut ChaCha8Rng) -> PromptOption {
    if rng.random_bool(0.2) {
        return PromptOption::text(label, "", "free text", "").unwrap();
    }
    let choices = [("One", "First choice"), ("Two", "Second choice"), ("Three", "Third choice")];
    if rng.random_bool(0.5) {
        PromptOption::radio(label, "", &choices, choices[rng.random_range(0..3)].1, "").unwrap()
    } else {
        PromptOption::checkbox(label, "", &choices, &["First choice", "Third choice"], "").unwrap()
    }
}

fn random_doc(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.1) {
        return "sorry, nothing to offer".into();
    }
    let n = rng.random_range(0..7);
    let options: Vec<PromptOption> = (0..n).map(|_| small_option(LABELS.choose(rng).unwrap(), rng)).collect();
    encode_options(options.iter())
}

fn chunks_of(text: &str, rng: &mut ChaCha8Rng) -> VecDeque<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = VecDeque::new();
    let mut i = 0;
    while i < chars.len() {
        let n = rng.random_range(1..=24).min(chars.len() - i);
        out.push_back(chars[i..i + n].iter().collect());
        i += n;
    }
    out
}

#[derive(Debug)]
struct LiveCall {
    chunks: VecDeque<String>,
    fail: bool,
}

/// Drives a [`SessionMachine`] with random commands and a random backend,
/// interleaving chunk deliveries, call ends and timer expiry at random.
pub struct Sim {
    pub machine: SessionMachine,
    pub rng: ChaCha8Rng,
    live: BTreeMap<u64, LiveCall>,
    timers: Vec<u64>,
    /// Calls cancelled by the engine; their chunks may still arrive late.
    pub cancelled: HashSet<u64>,
    pub events: Vec<StreamEvent>,
    pub started: Vec<(u64, CallPurpose)>,
    /// Full text scripted for each chat call.
    pub chat_text: HashMap<u64, String>,
    /// Deliver chunks of cancelled calls anyway, as a slow transport would.
    pub leaky_cancel: bool,
}

impl Sim {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Sim {
            machine: SessionMachine::new("sim", mode, EngineConfig::default()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            live: BTreeMap::new(),
            timers: Vec::new(),
            cancelled: HashSet::new(),
            events: Vec::new(),
            started: Vec::new(),
            chat_text: HashMap::new(),
            leaky_cancel: true,
        }
    }

    pub fn absorb(&mut self) {
        for effect in self.machine.take_effects() {
            match effect {
                Effect::StartCall { call, purpose, .. } => {
                    self.started.push((call, purpose));
                    let text = match purpose {
                        CallPurpose::Chat { .. } => {
                            let t = format!("reply-from-call-{call} with some words");
                            self.chat_text.insert(call, t.clone());
                            t
                        }
                        _ => random_doc(&mut self.rng),
                    };
                    let chunks = chunks_of(&text, &mut self.rng);
                    let fail = self.rng.random_bool(0.05);
                    self.live.insert(call, LiveCall { chunks, fail });
                }
                Effect::CancelCall { call } => {
                    self.cancelled.insert(call);
                    if !self.leaky_cancel {
                        self.live.remove(&call);
                    }
                }
                Effect::ArmTimer { timer, .. } => self.timers.push(timer),
                Effect::Emit(e) => self.events.push(e),
            }
        }
    }

    pub fn random_command(&mut self) -> Command {
        let state = self.machine.state();
        let latest = state.latest_turn().map_or(1, |t| t.id);
        let rng = &mut self.rng;
        let turn = if rng.random_bool(0.8) { latest } else { rng.random_range(1..=latest + 1) };
        let label = LABELS.choose(rng).unwrap().to_string();
        let value: prc_core::options::ControlValue = match rng.random_range(0..4) {
            0 => "First choice".into(),
            1 => "Second choice".into(),
            2 => vec!["Third choice"].into(),
            _ => "not a choice".into(),
        };
        match rng.random_range(0..10) {
            0 | 1 => Command::Submit {
                text: if rng.random_bool(0.1) { " ".into() } else { format!("question {}", rng.random::<u16>()) },
            },
            2 => Command::SetInline { turn, label, value },
            3 => Command::SetSession { label, value },
            4 => Command::Pin { turn, label },
            5 => Command::Unpin { label },
            6 => Command::Delete {
                tier: if rng.random_bool(0.5) { Tier::Inline } else { Tier::Session },
                label,
            },
            7 => Command::RequestControls {
                utterance: "more control over format".into(),
            },
            8 => {
                let n = rng.random_range(0..3);
                let set: Vec<PromptOption> = (0..n).map(|_| small_option(LABELS.choose(rng).unwrap(), rng)).collect();
                let json = if rng.random_bool(0.2) { "[{\"bad\": 1}]".to_string() } else { encode_options(set.iter()) };
                Command::Import { json }
            }
            _ => Command::SetInline {
                turn: latest,
                label: state
                    .latest_turn()
                    .and_then(|t| t.inline_options.labels().first().cloned())
                    .unwrap_or(label),
                value,
            },
        }
    }

    /// Advances one random backend or timer input. Returns false if none was pending.
    pub fn random_io(&mut self) -> bool {
        let mut choices: Vec<u8> = Vec::new();
        if !self.live.is_empty() {
            choices.extend([0, 0, 0, 1]);
        }
        if !self.timers.is_empty() {
            choices.push(2);
        }
        let Some(&pick) = choices.choose(&mut self.rng) else {
            return false;
        };
        match pick {
            0 | 1 => {
                let ids: Vec<u64> = self.live.keys().copied().collect();
                let call = *ids.choose(&mut self.rng).unwrap();
                let live = self.live.get_mut(&call).unwrap();
                if pick == 0 && !live.chunks.is_empty() {
                    let chunk = live.chunks.pop_front().unwrap();
                    self.machine.on_chunk(call, &chunk);
                } else {
                    let live = self.live.remove(&call).unwrap();
                    let result = if live.fail {
                        Err(prc_core::backend::GatewayError::Transport {
                            status: None,
                            detail: "dropped".into(),
                        })
                    } else {
                        // deliver whatever is left first
                        for chunk in &live.chunks {
                            self.machine.on_chunk(call, chunk);
                        }
                        Ok(())
                    };
                    self.machine.on_call_finished(call, result);
                }
            }
            _ => {
                let i = self.rng.random_range(0..self.timers.len());
                let timer = self.timers.remove(i);
                self.machine.on_timer(timer);
            }
        }
        true
    }

    /// Runs all outstanding work to completion.
    pub fn drain(&mut self) {
        while self.random_io() {
            self.absorb();
        }
    }
}

/// Label multiset of the latest turn's inline options plus the session options.
pub fn label_multiset(machine: &SessionMachine) -> Vec<String> {
    let state = machine.state();
    let mut labels: Vec<String> = state.session_options.labels().iter().map(|l| normalize_label(l)).collect();
    if let Some(t) = state.latest_turn() {
        labels.extend(t.inline_options.labels().iter().map(|l| normalize_label(l)));
    }
    labels.sort();
    labels
}

/// Legal status moves: forward through the stages, or between the two final states.
pub fn legal_move(from: TurnStatus, to: TurnStatus) -> bool {
    use TurnStatus::*;
    from == to
        || matches!(
            (from, to),
            (GeneratingOptions, GeneratingResponse)
                | (GeneratingResponse, Complete)
                | (GeneratingResponse, Errored)
                | (Complete, Errored)
                | (Errored, Complete)
        )
}
pub mod http;
