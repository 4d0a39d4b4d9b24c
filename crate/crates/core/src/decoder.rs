//! Incremental decoder for streamed option documents.
//!
//! The option generator streams a JSON array of option records. [`Decoder`]
//! accepts that stream in arbitrary chunks and reports each option as soon as
//! it is structurally complete, so controls can be rendered while the model is
//! still writing the rest of the array. Results do not depend on where chunk
//! boundaries fall.
//!
//! Anything before the first `[` (prose, a code fence) and anything after the
//! matching `]` is ignored. Inside the array the grammar is strict JSON: no
//! trailing commas, no comments, full escape handling.

use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::options::{validate_option, OptionSet, Origin, PromptOption, ValidationError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("syntax error at byte {offset}: {detail}")]
    Syntax { offset: usize, detail: String },
    #[error("incomplete document, open construct at {path}")]
    IncompleteDocument { path: String },
    #[error("option {index}: {error}")]
    Invalid { index: usize, error: ValidationError },
    #[error("decoder already failed")]
    Terminated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeEvent {
    OptionStarted {
        index: usize,
    },
    /// Emitted once per option, as soon as both `label` and `type` are known.
    OptionField {
        index: usize,
        label: String,
        kind: String,
    },
    OptionCompleted {
        index: usize,
        option: PromptOption,
    },
    /// The element was well-formed JSON but not a valid option.
    OptionRejected {
        index: usize,
        label: Option<String>,
        error: ValidationError,
    },
    DocumentCompleted {
        options: Vec<PromptOption>,
    },
    DecodeError {
        error: DecodeError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedOption {
    pub index: usize,
    pub label: Option<String>,
    pub error: ValidationError,
}

/// Per-element outcome of a decoded document, before any set-level rules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodedBatch {
    pub options: Vec<PromptOption>,
    pub rejected: Vec<RejectedOption>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Seeking,
    InArray,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Seq {
    ValueOrEnd,
    Value,
    CommaOrEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Obj {
    KeyOrEnd,
    Key,
    Colon,
    Value,
    CommaOrEnd,
}

#[derive(Debug)]
enum Frame {
    Root(Seq),
    Array(Vec<Value>, Seq),
    Object(Map<String, Value>, Option<String>, Obj),
}

#[derive(Debug)]
enum Token {
    Idle,
    Str(StrLex),
    Num(String),
    Lit { text: &'static [u8], pos: usize, value: Value },
}

#[derive(Debug, Default)]
struct StrLex {
    buf: Vec<u8>,
    key: bool,
    esc: Esc,
    high_surrogate: Option<u32>,
}

#[derive(Debug, Default, Clone, Copy)]
enum Esc {
    #[default]
    None,
    Backslash,
    Unicode { digits: u8, code: u32 },
    // after a high surrogate: expecting '\' then 'u'
    LowBackslash,
    LowU,
}

#[derive(Debug, Default)]
struct FieldTracker {
    label: Option<String>,
    kind: Option<String>,
    announced: bool,
}

/// Chunk-agnostic push decoder. Single owner, advanced sequentially.
#[derive(Debug)]
pub struct Decoder {
    origin: Origin,
    phase: Phase,
    offset: usize,
    stack: Vec<Frame>,
    token: Token,
    next_index: usize,
    outcomes: Vec<Result<PromptOption, ValidationError>>,
    tracker: FieldTracker,
    error: Option<DecodeError>,
    events: Vec<DecodeEvent>,
}

impl Decoder {
    pub fn new(origin: Origin) -> Self {
        Decoder {
            origin,
            phase: Phase::Seeking,
            offset: 0,
            stack: Vec::new(),
            token: Token::Idle,
            next_index: 0,
            outcomes: Vec::new(),
            tracker: FieldTracker::default(),
            error: None,
            events: Vec::new(),
        }
    }

    /// True once the document completed or decoding failed.
    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Failed)
    }

    pub fn is_failed(&self) -> bool {
        self.phase == Phase::Failed
    }

    pub fn completed_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_ok()).count()
    }

    /// Consumes a chunk and returns the events it produced, in document order.
    ///
    /// Bytes after the end of the array are ignored. Feeding a decoder that has
    /// already failed is rejected with [`DecodeError::Terminated`].
    pub fn feed(&mut self, chunk: &[u8]) -> Result<Vec<DecodeEvent>, DecodeError> {
        if self.phase == Phase::Failed {
            return Err(DecodeError::Terminated);
        }
        for &b in chunk {
            if self.phase == Phase::Done {
                break;
            }
            if let Err(error) = self.step(b) {
                self.phase = Phase::Failed;
                self.error = Some(error.clone());
                self.events.push(DecodeEvent::DecodeError { error });
                break;
            }
            self.offset += 1;
        }
        Ok(std::mem::take(&mut self.events))
    }

    /// Strict result: the whole document as an [`OptionSet`], or the first
    /// problem in document order.
    pub fn finalize(&self) -> Result<OptionSet, DecodeError> {
        match self.phase {
            Phase::Failed => Err(self.error.clone().unwrap_or(DecodeError::Terminated)),
            Phase::Done => {
                let mut set = OptionSet::new();
                for (index, outcome) in self.outcomes.iter().enumerate() {
                    let option = outcome
                        .clone()
                        .map_err(|error| DecodeError::Invalid { index, error })?;
                    set.push(option)
                        .map_err(|error| DecodeError::Invalid { index, error })?;
                }
                Ok(set)
            }
            Phase::Seeking | Phase::InArray => Err(DecodeError::IncompleteDocument { path: self.open_path() }),
        }
    }

    /// Lenient result for generation: valid options and per-element rejections.
    pub fn batch(&self) -> Result<DecodedBatch, DecodeError> {
        match self.phase {
            Phase::Failed => Err(self.error.clone().unwrap_or(DecodeError::Terminated)),
            Phase::Seeking | Phase::InArray => Err(DecodeError::IncompleteDocument { path: self.open_path() }),
            Phase::Done => Ok(self.current_batch()),
        }
    }

    fn current_batch(&self) -> DecodedBatch {
        let mut batch = DecodedBatch::default();
        for (index, outcome) in self.outcomes.iter().enumerate() {
            match outcome {
                Ok(o) => batch.options.push(o.clone()),
                Err(e) => batch.rejected.push(RejectedOption {
                    index,
                    label: None,
                    error: e.clone(),
                }),
            }
        }
        batch
    }

    fn open_path(&self) -> String {
        let mut path = String::from("$");
        for frame in &self.stack {
            match frame {
                Frame::Root(_) => path.push_str(&format!("[{}]", self.next_index.saturating_sub(1))),
                Frame::Array(items, _) => path.push_str(&format!("[{}]", items.len())),
                Frame::Object(_, key, _) => {
                    if let Some(k) = key {
                        path.push('.');
                        path.push_str(k);
                    }
                }
            }
        }
        if self.stack.len() == 1 {
            // only the root array is open
            return "$".to_string();
        }
        path
    }

    fn syntax(&self, detail: impl Into<String>) -> DecodeError {
        DecodeError::Syntax {
            offset: self.offset,
            detail: detail.into(),
        }
    }

    fn step(&mut self, b: u8) -> Result<(), DecodeError> {
        match self.phase {
            Phase::Seeking => {
                if b == b'[' {
                    self.phase = Phase::InArray;
                    self.stack.push(Frame::Root(Seq::ValueOrEnd));
                }
                Ok(())
            }
            Phase::InArray => self.step_token(b),
            Phase::Done | Phase::Failed => Ok(()),
        }
    }

    fn step_token(&mut self, b: u8) -> Result<(), DecodeError> {
        match &mut self.token {
            Token::Idle => self.step_structural(b),
            Token::Str(_) => self.step_string(b),
            Token::Num(buf) => {
                if matches!(b, b'0'..=b'9' | b'-' | b'+' | b'.' | b'e' | b'E') {
                    buf.push(b as char);
                    Ok(())
                } else {
                    let text = std::mem::take(buf);
                    self.token = Token::Idle;
                    let n = parse_number(&text).ok_or_else(|| self.syntax(format!("invalid number `{text}`")))?;
                    self.complete_value(Value::Number(n))?;
                    self.step_structural(b)
                }
            }
            Token::Lit { text, pos, value } => {
                if text[*pos] != b {
                    return Err(self.syntax("invalid literal"));
                }
                *pos += 1;
                if *pos == text.len() {
                    let v = value.take();
                    self.token = Token::Idle;
                    self.complete_value(v)?;
                }
                Ok(())
            }
        }
    }

    fn step_string(&mut self, b: u8) -> Result<(), DecodeError> {
        let offset = self.offset;
        let err = |d: &str| DecodeError::Syntax {
            offset,
            detail: d.to_string(),
        };
        let Token::Str(s) = &mut self.token else {
            unreachable!()
        };
        match s.esc {
            Esc::None => match b {
                b'"' => {
                    if s.high_surrogate.is_some() {
                        return Err(err("lone leading surrogate"));
                    }
                    let lex = std::mem::take(s);
                    self.token = Token::Idle;
                    let text = String::from_utf8(lex.buf).map_err(|_| err("invalid UTF-8 in string"))?;
                    if lex.key {
                        self.set_key(text);
                        Ok(())
                    } else {
                        self.complete_value(Value::String(text))
                    }
                }
                b'\\' => {
                    s.esc = Esc::Backslash;
                    Ok(())
                }
                0x00..=0x1f => Err(err("control character in string")),
                _ => {
                    s.buf.push(b);
                    Ok(())
                }
            },
            Esc::Backslash => {
                let c = match b {
                    b'"' => b'"',
                    b'\\' => b'\\',
                    b'/' => b'/',
                    b'b' => 0x08,
                    b'f' => 0x0c,
                    b'n' => b'\n',
                    b'r' => b'\r',
                    b't' => b'\t',
                    b'u' => {
                        s.esc = Esc::Unicode { digits: 0, code: 0 };
                        return Ok(());
                    }
                    _ => return Err(err("invalid escape")),
                };
                s.buf.push(c);
                s.esc = Esc::None;
                Ok(())
            }
            Esc::Unicode { digits, code } => {
                let d = (b as char).to_digit(16).ok_or_else(|| err("invalid unicode escape"))?;
                let code = code * 16 + d;
                if digits < 3 {
                    s.esc = Esc::Unicode { digits: digits + 1, code };
                    return Ok(());
                }
                s.esc = Esc::None;
                match (s.high_surrogate.take(), code) {
                    (None, 0xD800..=0xDBFF) => {
                        s.high_surrogate = Some(code);
                        s.esc = Esc::LowBackslash;
                    }
                    (None, 0xDC00..=0xDFFF) => return Err(err("lone trailing surrogate")),
                    (None, c) => push_char(&mut s.buf, c),
                    (Some(high), 0xDC00..=0xDFFF) => {
                        let c = 0x10000 + ((high - 0xD800) << 10) + (code - 0xDC00);
                        push_char(&mut s.buf, c);
                    }
                    (Some(_), _) => return Err(err("unpaired surrogate")),
                }
                Ok(())
            }
            Esc::LowBackslash => {
                if b != b'\\' {
                    return Err(err("lone leading surrogate"));
                }
                s.esc = Esc::LowU;
                Ok(())
            }
            Esc::LowU => {
                if b != b'u' {
                    return Err(err("lone leading surrogate"));
                }
                s.esc = Esc::Unicode { digits: 0, code: 0 };
                Ok(())
            }
        }
    }

    fn step_structural(&mut self, b: u8) -> Result<(), DecodeError> {
        if matches!(b, b' ' | b'\t' | b'\n' | b'\r') {
            return Ok(());
        }
        let top = self.stack.last_mut().expect("root frame present while in array");
        match top {
            Frame::Root(state) | Frame::Array(_, state) => match (*state, b) {
                (Seq::ValueOrEnd | Seq::CommaOrEnd, b']') => self.close_container(),
                (Seq::CommaOrEnd, b',') => {
                    *state = Seq::Value;
                    Ok(())
                }
                (Seq::ValueOrEnd | Seq::Value, _) => self.begin_value(b),
                _ => Err(self.syntax(format!("unexpected `{}` in array", b as char))),
            },
            Frame::Object(_, _, state) => match (*state, b) {
                (Obj::KeyOrEnd | Obj::CommaOrEnd, b'}') => self.close_container(),
                (Obj::KeyOrEnd | Obj::Key, b'"') => {
                    self.token = Token::Str(StrLex {
                        key: true,
                        ..Default::default()
                    });
                    Ok(())
                }
                (Obj::Colon, b':') => {
                    *state = Obj::Value;
                    Ok(())
                }
                (Obj::Value, _) => self.begin_value(b),
                (Obj::CommaOrEnd, b',') => {
                    *state = Obj::Key;
                    Ok(())
                }
                _ => Err(self.syntax(format!("unexpected `{}` in object", b as char))),
            },
        }
    }

    fn begin_value(&mut self, b: u8) -> Result<(), DecodeError> {
        if matches!(self.stack.last(), Some(Frame::Root(_))) {
            let index = self.next_index;
            self.next_index += 1;
            self.tracker = FieldTracker::default();
            self.events.push(DecodeEvent::OptionStarted { index });
        }
        match b {
            b'{' => self.stack.push(Frame::Object(Map::new(), None, Obj::KeyOrEnd)),
            b'[' => self.stack.push(Frame::Array(Vec::new(), Seq::ValueOrEnd)),
            b'"' => self.token = Token::Str(StrLex::default()),
            b'-' | b'0'..=b'9' => self.token = Token::Num((b as char).to_string()),
            b't' => self.token = literal(b"true", Value::Bool(true)),
            b'f' => self.token = literal(b"false", Value::Bool(false)),
            b'n' => self.token = literal(b"null", Value::Null),
            _ => return Err(self.syntax(format!("unexpected `{}`", b as char))),
        }
        Ok(())
    }

    fn set_key(&mut self, key: String) {
        if let Some(Frame::Object(_, slot, state)) = self.stack.last_mut() {
            *slot = Some(key);
            *state = Obj::Colon;
        }
    }

    fn close_container(&mut self) -> Result<(), DecodeError> {
        match self.stack.pop().expect("open container") {
            Frame::Root(_) => {
                self.phase = Phase::Done;
                let options = self.outcomes.iter().filter_map(|o| o.as_ref().ok().cloned()).collect();
                self.events.push(DecodeEvent::DocumentCompleted { options });
                Ok(())
            }
            Frame::Array(items, _) => self.complete_value(Value::Array(items)),
            Frame::Object(map, _, _) => self.complete_value(Value::Object(map)),
        }
    }

    fn complete_value(&mut self, value: Value) -> Result<(), DecodeError> {
        let depth = self.stack.len();
        match self.stack.last_mut().expect("value has a parent") {
            Frame::Root(state) => {
                *state = Seq::CommaOrEnd;
                let index = self.outcomes.len();
                let outcome = validate_option(&value, self.origin);
                match &outcome {
                    Ok(option) => self.events.push(DecodeEvent::OptionCompleted {
                        index,
                        option: option.clone(),
                    }),
                    Err(error) => self.events.push(DecodeEvent::OptionRejected {
                        index,
                        label: value.get("label").and_then(Value::as_str).map(str::to_string),
                        error: error.clone(),
                    }),
                }
                self.outcomes.push(outcome);
            }
            Frame::Array(items, state) => {
                items.push(value);
                *state = Seq::CommaOrEnd;
            }
            Frame::Object(map, key, state) => {
                let key = key.take().unwrap_or_default();
                if depth == 2 {
                    if let Value::String(s) = &value {
                        match key.as_str() {
                            "label" if self.tracker.label.is_none() => self.tracker.label = Some(s.clone()),
                            "type" if self.tracker.kind.is_none() => self.tracker.kind = Some(s.clone()),
                            _ => {}
                        }
                    }
                }
                map.insert(key, value);
                *state = Obj::CommaOrEnd;
                if depth == 2 && !self.tracker.announced {
                    if let (Some(label), Some(kind)) = (&self.tracker.label, &self.tracker.kind) {
                        self.tracker.announced = true;
                        self.events.push(DecodeEvent::OptionField {
                            index: self.next_index - 1,
                            label: label.clone(),
                            kind: kind.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn literal(text: &'static [u8], value: Value) -> Token {
    Token::Lit { text, pos: 1, value }
}

fn push_char(buf: &mut Vec<u8>, code: u32) {
    let c = char::from_u32(code).unwrap_or(char::REPLACEMENT_CHARACTER);
    let mut tmp = [0u8; 4];
    buf.extend_from_slice(c.encode_utf8(&mut tmp).as_bytes());
}

/// Validates JSON number grammar before converting.
fn parse_number(text: &str) -> Option<Number> {
    let b = text.as_bytes();
    let mut i = 0;
    if b.get(i) == Some(&b'-') {
        i += 1;
    }
    match b.get(i) {
        Some(b'0') => i += 1,
        Some(b'1'..=b'9') => {
            while matches!(b.get(i), Some(b'0'..=b'9')) {
                i += 1;
            }
        }
        _ => return None,
    }
    if b.get(i) == Some(&b'.') {
        i += 1;
        let start = i;
        while matches!(b.get(i), Some(b'0'..=b'9')) {
            i += 1;
        }
        if i == start {
            return None;
        }
    }
    if matches!(b.get(i), Some(b'e' | b'E')) {
        i += 1;
        if matches!(b.get(i), Some(b'+' | b'-')) {
            i += 1;
        }
        let start = i;
        while matches!(b.get(i), Some(b'0'..=b'9')) {
            i += 1;
        }
        if i == start {
            return None;
        }
    }
    if i != b.len() {
        return None;
    }
    text.parse().ok()
}

/// Feeds a whole document at once and returns the strict result.
pub fn decode_all(text: &[u8], origin: Origin) -> Result<OptionSet, DecodeError> {
    let mut d = Decoder::new(origin);
    d.feed(text)?;
    d.finalize()
}
