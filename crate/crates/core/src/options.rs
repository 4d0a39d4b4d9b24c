//! Prompt option data model.
//!
//! A [`PromptOption`] is one GUI control produced by the option generator (or
//! loaded from a preset / pasted JSON): either a set of discrete choices rendered
//! as radio buttons or checkboxes, or a free-text field. Choice values always
//! store the choice *description*, which doubles as the instruction text handed
//! to the chat model.
//!
//! The wire shape is a JSON object with the fields `type`, `label`,
//! `description`, `options`, `appearance`, `value` and `reason`, in that order
//! when written by [`encode_options`].

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Appearance {
    SingleSelectRadio,
    MultiSelectCheckbox,
}

impl Appearance {
    pub fn as_str(self) -> &'static str {
        match self {
            Appearance::SingleSelectRadio => "single-select-radio",
            Appearance::MultiSelectCheckbox => "multi-select-checkbox",
        }
    }
}

/// Where an option came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    GeneratedInline,
    GeneratedSession,
    Pinned,
    Preset,
    UserJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub description: String,
}

/// A control value: one string, or a list of strings for checkboxes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlValue {
    Single(String),
    Multi(Vec<String>),
}

impl From<&str> for ControlValue {
    fn from(s: &str) -> Self {
        ControlValue::Single(s.to_string())
    }
}

impl From<String> for ControlValue {
    fn from(s: String) -> Self {
        ControlValue::Single(s)
    }
}

impl From<Vec<String>> for ControlValue {
    fn from(v: Vec<String>) -> Self {
        ControlValue::Multi(v)
    }
}

impl From<Vec<&str>> for ControlValue {
    fn from(v: Vec<&str>) -> Self {
        ControlValue::Multi(v.into_iter().map(str::to_string).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceControl {
    label: String,
    description: String,
    choices: Vec<Choice>,
    appearance: Appearance,
    value: ControlValue,
    reason: String,
}

impl ChoiceControl {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn choices(&self) -> &[Choice] {
        &self.choices
    }

    pub fn appearance(&self) -> Appearance {
        self.appearance
    }

    pub fn value(&self) -> &ControlValue {
        &self.value
    }

    pub fn reason(&self) -> &str {
        &self.reason
    }

    fn is_choice_description(&self, s: &str) -> bool {
        self.choices.iter().any(|c| c.description == s)
    }

    fn value_is_canonical(&self) -> bool {
        match &self.value {
            ControlValue::Single(s) => self.is_choice_description(s),
            ControlValue::Multi(v) => v.iter().all(|s| self.is_choice_description(s)),
        }
    }

    /// Puts checkbox values in choice order, followed by any paraphrased
    /// (non-canonical) values in their original order. Duplicates are dropped.
    fn normalize_multi(&self, values: Vec<String>) -> Vec<String> {
        let mut out: Vec<String> = self
            .choices
            .iter()
            .filter(|c| values.contains(&c.description))
            .map(|c| c.description.clone())
            .collect();
        for v in values {
            if !self.is_choice_description(&v) && !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextControl {
    label: String,
    description: String,
    value: String,
    reason: String,
}

impl TextControl {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn reason(&self) -> &str {
        &self.reason
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Control {
    #[serde(rename = "option")]
    Choice(ChoiceControl),
    Text(TextControl),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOption {
    pub control: Control,
    pub origin: Origin,
    /// Set when a generated value does not match any choice description.
    pub non_canonical: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{0}` has the wrong shape")]
    WrongShape(String),
    #[error("choice control has no choices")]
    EmptyChoices,
    #[error("choice control has no value")]
    EmptyValue,
    #[error("label is empty")]
    EmptyLabel,
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
}

impl ValidationError {
    pub fn name(&self) -> &'static str {
        match self {
            ValidationError::MissingField(_) => "MissingField",
            ValidationError::WrongShape(_) => "WrongShape",
            ValidationError::EmptyChoices => "EmptyChoices",
            ValidationError::EmptyValue => "EmptyValue",
            ValidationError::EmptyLabel => "EmptyLabel",
            ValidationError::DuplicateLabel(_) => "DuplicateLabel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("`{0}` is not one of the control's choice descriptions")]
    NotACanonicalChoice(String),
    #[error("value shape does not match the control")]
    ShapeMismatch,
}

impl ValueError {
    pub fn name(&self) -> &'static str {
        match self {
            ValueError::NotACanonicalChoice(_) => "NotACanonicalChoice",
            ValueError::ShapeMismatch => "ShapeMismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {detail}")]
    Syntax { offset: usize, detail: String },
    #[error("option {index}: {source}")]
    Invalid {
        index: usize,
        #[source]
        source: ValidationError,
    },
}

impl ParseError {
    pub fn name(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "SyntaxError",
            ParseError::Invalid { source, .. } => source.name(),
        }
    }
}

/// Label comparison key: trimmed and case-folded.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

impl PromptOption {
    pub fn label(&self) -> &str {
        match &self.control {
            Control::Choice(c) => &c.label,
            Control::Text(t) => &t.label,
        }
    }

    pub fn description(&self) -> &str {
        match &self.control {
            Control::Choice(c) => &c.description,
            Control::Text(t) => &t.description,
        }
    }

    pub fn reason(&self) -> &str {
        match &self.control {
            Control::Choice(c) => &c.reason,
            Control::Text(t) => &t.reason,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match &self.control {
            Control::Choice(_) => "option",
            Control::Text(_) => "text",
        }
    }

    pub fn value(&self) -> ControlValue {
        match &self.control {
            Control::Choice(c) => c.value.clone(),
            Control::Text(t) => ControlValue::Single(t.value.clone()),
        }
    }

    pub fn as_choice(&self) -> Option<&ChoiceControl> {
        match &self.control {
            Control::Choice(c) => Some(c),
            Control::Text(_) => None,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    /// Builds a single-select control. `choices` are `(label, description)` pairs.
    pub fn radio(
        label: &str,
        description: &str,
        choices: &[(&str, &str)],
        value: &str,
        reason: &str,
    ) -> Result<Self, ValidationError> {
        Self::choice(
            label,
            description,
            choices,
            Appearance::SingleSelectRadio,
            ControlValue::Single(value.to_string()),
            reason,
        )
    }

    pub fn checkbox(
        label: &str,
        description: &str,
        choices: &[(&str, &str)],
        value: &[&str],
        reason: &str,
    ) -> Result<Self, ValidationError> {
        Self::choice(
            label,
            description,
            choices,
            Appearance::MultiSelectCheckbox,
            value.to_vec().into(),
            reason,
        )
    }

    pub fn text(label: &str, description: &str, value: &str, reason: &str) -> Result<Self, ValidationError> {
        if label.trim().is_empty() {
            return Err(ValidationError::EmptyLabel);
        }
        Ok(PromptOption {
            control: Control::Text(TextControl {
                label: label.to_string(),
                description: description.to_string(),
                value: value.to_string(),
                reason: reason.to_string(),
            }),
            origin: Origin::UserJson,
            non_canonical: false,
        })
    }

    fn choice(
        label: &str,
        description: &str,
        choices: &[(&str, &str)],
        appearance: Appearance,
        value: ControlValue,
        reason: &str,
    ) -> Result<Self, ValidationError> {
        let choices = choices
            .iter()
            .map(|(l, d)| Choice {
                label: l.to_string(),
                description: d.to_string(),
            })
            .collect();
        build_choice(
            label.to_string(),
            description.to_string(),
            choices,
            appearance,
            Some(value),
            reason.to_string(),
            Origin::UserJson,
        )
    }
}

fn build_choice(
    label: String,
    description: String,
    choices: Vec<Choice>,
    appearance: Appearance,
    value: Option<ControlValue>,
    reason: String,
    origin: Origin,
) -> Result<PromptOption, ValidationError> {
    if label.trim().is_empty() {
        return Err(ValidationError::EmptyLabel);
    }
    if choices.is_empty() {
        return Err(ValidationError::EmptyChoices);
    }
    for (i, c) in choices.iter().enumerate() {
        if choices[..i].iter().any(|p| p.label == c.label) {
            return Err(ValidationError::WrongShape("options".into()));
        }
    }
    let value = match (appearance, value) {
        (_, None) => return Err(ValidationError::EmptyValue),
        (Appearance::SingleSelectRadio, Some(ControlValue::Single(s))) => {
            if s.is_empty() {
                return Err(ValidationError::EmptyValue);
            }
            ControlValue::Single(s)
        }
        (Appearance::MultiSelectCheckbox, Some(ControlValue::Multi(v))) => ControlValue::Multi(v),
        _ => return Err(ValidationError::WrongShape("value".into())),
    };
    let mut control = ChoiceControl {
        label,
        description,
        choices,
        appearance,
        value,
        reason,
    };
    if let ControlValue::Multi(v) = &control.value {
        let normalized = control.normalize_multi(v.clone());
        control.value = ControlValue::Multi(normalized);
    }
    let non_canonical = !control.value_is_canonical();
    Ok(PromptOption {
        control: Control::Choice(control),
        origin,
        non_canonical,
    })
}

fn str_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<Option<String>, ValidationError> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ValidationError::WrongShape(name.into())),
    }
}

fn required_str(obj: &serde_json::Map<String, Value>, name: &str) -> Result<String, ValidationError> {
    str_field(obj, name)?.ok_or_else(|| ValidationError::MissingField(name.into()))
}

/// Validates one decoded option record.
///
/// Generated values that paraphrase a choice are kept and flagged
/// `non_canonical`; an absent or empty choice value is an error. `description`
/// and `reason` default to the empty string when absent.
pub fn validate_option(candidate: &Value, origin: Origin) -> Result<PromptOption, ValidationError> {
    let obj = candidate
        .as_object()
        .ok_or_else(|| ValidationError::WrongShape("option".into()))?;
    let kind = required_str(obj, "type")?;
    let label = required_str(obj, "label")?;
    let description = str_field(obj, "description")?.unwrap_or_default();
    let reason = str_field(obj, "reason")?.unwrap_or_default();
    match kind.as_str() {
        "option" => {
            let choices = match obj.get("options") {
                None | Some(Value::Null) => return Err(ValidationError::MissingField("options".into())),
                Some(Value::Object(map)) => map
                    .iter()
                    .map(|(k, v)| match v {
                        Value::String(d) => Ok(Choice {
                            label: k.clone(),
                            description: d.clone(),
                        }),
                        _ => Err(ValidationError::WrongShape("options".into())),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                Some(_) => return Err(ValidationError::WrongShape("options".into())),
            };
            let appearance = match required_str(obj, "appearance")?.as_str() {
                "single-select-radio" => Appearance::SingleSelectRadio,
                "multi-select-checkbox" => Appearance::MultiSelectCheckbox,
                _ => return Err(ValidationError::WrongShape("appearance".into())),
            };
            let value = match obj.get("value") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(ControlValue::Single(s.clone())),
                Some(Value::Array(items)) => Some(ControlValue::Multi(
                    items
                        .iter()
                        .map(|v| match v {
                            Value::String(s) => Ok(s.clone()),
                            _ => Err(ValidationError::WrongShape("value".into())),
                        })
                        .collect::<Result<_, _>>()?,
                )),
                Some(_) => return Err(ValidationError::WrongShape("value".into())),
            };
            build_choice(label, description, choices, appearance, value, reason, origin)
        }
        "text" => {
            if label.trim().is_empty() {
                return Err(ValidationError::EmptyLabel);
            }
            let value = required_str(obj, "value")?;
            Ok(PromptOption {
                control: Control::Text(TextControl {
                    label,
                    description,
                    value,
                    reason,
                }),
                origin,
                non_canonical: false,
            })
        }
        _ => Err(ValidationError::WrongShape("type".into())),
    }
}

/// Refinement strings contributed by an option: radio gives its value,
/// checkboxes their values in choice order, text its value when nonempty.
pub fn selected_refinements(option: &PromptOption) -> Vec<String> {
    match &option.control {
        Control::Choice(c) => match &c.value {
            ControlValue::Single(s) => vec![s.clone()],
            ControlValue::Multi(v) => v.clone(),
        },
        Control::Text(t) if t.value.is_empty() => Vec::new(),
        Control::Text(t) => vec![t.value.clone()],
    }
}

/// Strict value update used by UI and API clients.
pub fn set_value(option: &PromptOption, new_value: ControlValue) -> Result<PromptOption, ValueError> {
    let mut updated = option.clone();
    match (&mut updated.control, new_value) {
        (Control::Text(t), ControlValue::Single(s)) => t.value = s,
        (Control::Choice(c), ControlValue::Single(s)) if c.appearance == Appearance::SingleSelectRadio => {
            if !c.is_choice_description(&s) {
                return Err(ValueError::NotACanonicalChoice(s));
            }
            c.value = ControlValue::Single(s);
        }
        (Control::Choice(c), ControlValue::Multi(v)) if c.appearance == Appearance::MultiSelectCheckbox => {
            if let Some(bad) = v.iter().find(|s| !c.is_choice_description(s)) {
                return Err(ValueError::NotACanonicalChoice(bad.clone()));
            }
            c.value = ControlValue::Multi(c.normalize_multi(v));
        }
        _ => return Err(ValueError::ShapeMismatch),
    }
    updated.non_canonical = false;
    Ok(updated)
}

/// Ordered collection of options with case-insensitive unique labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OptionSet(Vec<PromptOption>);

impl OptionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_options(options: Vec<PromptOption>) -> Result<Self, ValidationError> {
        let mut set = OptionSet::new();
        for o in options {
            set.push(o)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, option: PromptOption) -> Result<(), ValidationError> {
        if self.contains_label(option.label()) {
            return Err(ValidationError::DuplicateLabel(option.label().to_string()));
        }
        self.0.push(option);
        Ok(())
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.position(label).is_some()
    }

    fn position(&self, label: &str) -> Option<usize> {
        let key = normalize_label(label);
        self.0.iter().position(|o| normalize_label(o.label()) == key)
    }

    pub fn get(&self, label: &str) -> Option<&PromptOption> {
        self.position(label).map(|i| &self.0[i])
    }

    /// Replaces the option with the same label in place.
    pub fn replace(&mut self, option: PromptOption) -> bool {
        match self.position(option.label()) {
            Some(i) => {
                self.0[i] = option;
                true
            }
            None => false,
        }
    }

    pub fn remove(&mut self, label: &str) -> Option<PromptOption> {
        self.position(label).map(|i| self.0.remove(i))
    }

    pub fn labels(&self) -> Vec<String> {
        self.0.iter().map(|o| o.label().to_string()).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PromptOption> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[PromptOption] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<PromptOption> {
        self.0
    }
}

impl<'a> IntoIterator for &'a OptionSet {
    type Item = &'a PromptOption;
    type IntoIter = std::slice::Iter<'a, PromptOption>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedDuplicate {
    pub label: String,
}

/// Appends incoming options whose normalized label is not already present.
/// Existing options win; every dropped incoming option is reported.
pub fn merge_dedupe(existing: &OptionSet, incoming: &OptionSet) -> (OptionSet, Vec<DroppedDuplicate>) {
    let mut merged = existing.clone();
    let mut dropped = Vec::new();
    for option in incoming {
        if merged.contains_label(option.label()) {
            dropped.push(DroppedDuplicate {
                label: option.label().to_string(),
            });
        } else {
            merged.0.push(option.clone());
        }
    }
    (merged, dropped)
}

// Canonical wire encoding. Field order is fixed by declaration order.

struct ChoicesMap<'a>(&'a [Choice]);

impl Serialize for ChoicesMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for c in self.0 {
            map.serialize_entry(&c.label, &c.description)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireOption<'a> {
    Choice {
        #[serde(rename = "type")]
        kind: &'static str,
        label: &'a str,
        description: &'a str,
        options: ChoicesMap<'a>,
        appearance: Appearance,
        value: &'a ControlValue,
        reason: &'a str,
    },
    Text {
        #[serde(rename = "type")]
        kind: &'static str,
        label: &'a str,
        description: &'a str,
        value: &'a str,
        reason: &'a str,
    },
}

impl<'a> From<&'a PromptOption> for WireOption<'a> {
    fn from(o: &'a PromptOption) -> Self {
        match &o.control {
            Control::Choice(c) => WireOption::Choice {
                kind: "option",
                label: &c.label,
                description: &c.description,
                options: ChoicesMap(&c.choices),
                appearance: c.appearance,
                value: &c.value,
                reason: &c.reason,
            },
            Control::Text(t) => WireOption::Text {
                kind: "text",
                label: &t.label,
                description: &t.description,
                value: &t.value,
                reason: &t.reason,
            },
        }
    }
}

/// Canonical pretty-printed array (2-space indent, fixed key order).
pub fn encode_options<'a, I>(options: I) -> String
where
    I: IntoIterator<Item = &'a PromptOption>,
{
    let wire: Vec<WireOption<'_>> = options.into_iter().map(WireOption::from).collect();
    serde_json::to_string_pretty(&wire).expect("option encoding is infallible")
}

pub fn encode_option(option: &PromptOption) -> String {
    serde_json::to_string_pretty(&WireOption::from(option)).expect("option encoding is infallible")
}

/// Wire value of one option, in canonical key order.
pub fn option_to_value(option: &PromptOption) -> Value {
    serde_json::to_value(WireOption::from(option)).expect("option encoding is infallible")
}

/// Locates the option array inside `text`, tolerating a leading code fence or
/// prose before the first `[`. Returns the byte offset of that bracket.
pub(crate) fn array_start(text: &str) -> Option<usize> {
    text.find('[')
}

/// Batch parse of a complete option document.
///
/// Everything before the first `[` and after its matching `]` is ignored.
/// Any invalid element rejects the whole document.
pub fn parse_option_document(text: &str, origin: Origin) -> Result<OptionSet, ParseError> {
    let items = parse_document_values(text)?;
    let mut set = OptionSet::new();
    for (index, item) in items.iter().enumerate() {
        let option = validate_option(item, origin).map_err(|source| ParseError::Invalid { index, source })?;
        set.push(option)
            .map_err(|source| ParseError::Invalid { index, source })?;
    }
    Ok(set)
}

/// Batch decode of the raw element values, without validation.
pub fn parse_document_values(text: &str) -> Result<Vec<Value>, ParseError> {
    let start = array_start(text).ok_or(ParseError::Syntax {
        offset: text.len(),
        detail: "no option array found".into(),
    })?;
    let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
    match stream.next() {
        Some(Ok(Value::Array(items))) => Ok(items),
        Some(Ok(_)) => unreachable!("document starts with '['"),
        Some(Err(e)) => Err(ParseError::Syntax {
            offset: start + stream.byte_offset(),
            detail: e.to_string(),
        }),
        None => Err(ParseError::Syntax {
            offset: text.len(),
            detail: "empty document".into(),
        }),
    }
}
