use std::collections::BTreeMap;
use std::path::Path;

use super::DialogError;
use crate::corpus::QuestionType;
use crate::kb::{AttributeName, Fact, RelationType};

pub const NO_ENTITY: &str = "no_entity";
pub const NO_ANSWER: &str = "no_answer";
pub const UNRESOLVED_ENTITY: &str = "unresolved_entity";
pub const LOW_CONFIDENCE: &str = "low_confidence";

const RELATION_SLOTS: &[&str] = &["ds", "object", "source"];
const ATTRIBUTE_SLOTS: &[&str] = &["ds", "value", "source"];

/// Every key a template set must define, with the slots it may use.
fn key_slots() -> Vec<(&'static str, &'static [&'static str])> {
    let mut keys: Vec<(&str, &[&str])> = RelationType::ALL
        .iter()
        .map(|r| (r.as_str(), RELATION_SLOTS))
        .collect();
    keys.push(("products_containing", RELATION_SLOTS));
    keys.extend(
        AttributeName::ALL
            .iter()
            .map(|a| (a.as_str(), ATTRIBUTE_SLOTS)),
    );
    keys.push((NO_ENTITY, &[]));
    keys.push((NO_ANSWER, &["ds", "qtype"]));
    keys.push((UNRESOLVED_ENTITY, &["entity"]));
    keys.push((LOW_CONFIDENCE, &["first", "second"]));
    keys
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

fn parse(template: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}');
        match close {
            Some(c)
                if c > 0
                    && after[..c]
                        .chars()
                        .all(|ch| ch.is_ascii_alphanumeric() || ch == '_') =>
            {
                text.push_str(&rest[..open]);
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(after[..c].to_string()));
                rest = &after[c + 1..];
            }
            _ => {
                text.push_str(&rest[..=open]);
                rest = after;
            }
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

/// Slot-filling answer templates keyed by route or fallback kind.
/// Substitution is literal: slot values are never re-scanned for slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, Vec<Piece>>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let raw: BTreeMap<String, String> = [
            ("is_effective_for", "{ds} is effective for {object}."),
            ("has_adverse_effect_on", "The {ds} preparation has adverse effects like {object}."),
            ("has_adverse_reaction", "{ds} may cause {object}."),
            ("has_ingredient", "{ds} contains {object}."),
            ("has_therapeutic_class", "{ds} belongs to the therapeutic class {object}."),
            ("interacts_with", "{ds} interacts with {object}."),
            ("products_containing", "{object} contains {ds}."),
            ("background", "Here is some background on {ds}: {value}"),
            ("safety", "Here is what I found about {ds}: {value}"),
            ("usage", "Here is how {ds} is usually taken: {value}"),
            (NO_ENTITY, "I could not find a dietary supplement in your question. Which supplement are you asking about?"),
            (NO_ANSWER, "I could not find {qtype} information about {ds}."),
            (UNRESOLVED_ENTITY, "I do not have information about {entity} yet."),
            (LOW_CONFIDENCE, "I am not sure what you are asking. Is your question about {first} or {second}?"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self::from_map(raw).expect("default templates are valid")
    }
}

impl TemplateSet {
    /// Validates that every required key is present and non-empty, that no
    /// unknown key is given, and that each template uses only its allowed
    /// slots.
    pub fn from_map(raw: BTreeMap<String, String>) -> Result<Self, DialogError> {
        let allowed: BTreeMap<&str, &[&str]> = key_slots().into_iter().collect();
        if let Some(k) = raw.keys().find(|k| !allowed.contains_key(k.as_str())) {
            return Err(DialogError::Template(format!("unknown template key {k:?}")));
        }
        let mut templates = BTreeMap::new();
        for (key, slots) in &allowed {
            let Some(text) = raw.get(*key) else {
                return Err(DialogError::Template(format!("missing template {key:?}")));
            };
            if text.trim().is_empty() {
                return Err(DialogError::Template(format!("template {key:?} is empty")));
            }
            let pieces = parse(text);
            for p in &pieces {
                if let Piece::Slot(s) = p {
                    if !slots.contains(&s.as_str()) {
                        return Err(DialogError::Template(format!(
                            "template {key:?} uses undefined slot {{{s}}}; allowed: {}",
                            slots
                                .iter()
                                .map(|s| format!("{{{s}}}"))
                                .collect::<Vec<_>>()
                                .join(" ")
                        )));
                    }
                }
            }
            templates.insert(key.to_string(), pieces);
        }
        Ok(TemplateSet { templates })
    }

    /// Reads a JSON object of key → template. Keys left out fall back to
    /// the defaults.
    pub fn from_json(json: &str) -> Result<Self, DialogError> {
        let overrides: BTreeMap<String, String> = serde_json::from_str(json)
            .map_err(|e| DialogError::Template(format!("invalid template JSON: {e}")))?;
        let mut raw = Self::default().to_map();
        raw.extend(overrides);
        Self::from_map(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DialogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| DialogError::Template(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(k, pieces)| {
                let text = pieces
                    .iter()
                    .map(|p| match p {
                        Piece::Text(t) => t.clone(),
                        Piece::Slot(s) => format!("{{{s}}}"),
                    })
                    .collect();
                (k.clone(), text)
            })
            .collect()
    }

    /// Fills `key` with `values`; slots without a value render empty.
    pub fn fill(&self, key: &str, values: &[(&str, &str)]) -> String {
        let Some(pieces) = self.templates.get(key) else {
            return String::new();
        };
        let mut out = String::new();
        for p in pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => {
                    out.push_str(values.iter().find(|(k, _)| k == s).map_or("", |(_, v)| v));
                }
            }
        }
        out
    }

    fn fill_fact(&self, fact: &Fact) -> String {
        let object = fact.object_name.as_deref().unwrap_or("");
        let value = fact.value.as_deref().unwrap_or("");
        self.fill(
            fact.route.key(),
            &[
                ("ds", &fact.subject_name),
                ("object", object),
                ("value", value),
                ("source", &fact.source),
            ],
        )
    }
}

/// Words for a question type inside a sentence, e.g. "adverse effects".
pub fn qtype_phrase(qtype: QuestionType) -> &'static str {
    match qtype {
        QuestionType::Interaction => "interaction",
        QuestionType::Usage => "usage",
        QuestionType::Effectiveness => "effectiveness",
        QuestionType::AdverseEffects => "adverse effects",
        QuestionType::Indication => "indication",
        QuestionType::Background => "background",
        QuestionType::Safety => "safety",
        QuestionType::Availability => "availability",
    }
}

/// Renders facts as one answer. A single fact gives its template as is;
/// several facts are joined with "; " into one sentence. With no facts the
/// `no_answer` fallback names `subject`.
pub fn render(
    templates: &TemplateSet,
    qtype: QuestionType,
    facts: &[Fact],
    subject: &str,
) -> String {
    match facts {
        [] => templates.fill(
            NO_ANSWER,
            &[("ds", subject), ("qtype", qtype_phrase(qtype))],
        ),
        [one] => templates.fill_fact(one),
        many => {
            let parts: Vec<String> = many
                .iter()
                .map(|f| {
                    templates
                        .fill_fact(f)
                        .trim_end()
                        .trim_end_matches('.')
                        .to_string()
                })
                .collect();
            format!("{}.", parts.join("; "))
        }
    }
}
