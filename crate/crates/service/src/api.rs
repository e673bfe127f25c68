//! Request and response bodies.

use std::collections::BTreeMap;

use dsqa_core::classifier::NUM_CLASSES;
use dsqa_core::dialog::{LinkedEntity, Outcome, Turn};
use dsqa_core::kb::Fact;
use dsqa_core::math::argmax;
use dsqa_core::{EntitySpan, QuestionType};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Accepted for client bookkeeping; the service keeps no session state.
    #[serde(default)]
    pub session_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub surface: String,
    pub etype: String,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cui: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
}

impl EntityView {
    pub fn from_span(s: &EntitySpan) -> Self {
        EntityView {
            surface: s.surface.clone(),
            etype: s.etype.to_string(),
            start: s.start,
            end: s.end,
            cui: None,
            concept: None,
        }
    }

    pub fn from_linked(e: &LinkedEntity) -> Self {
        EntityView {
            cui: e.cui.clone(),
            concept: e.concept_name.clone(),
            ..Self::from_span(&e.span)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactView {
    pub subject: String,
    /// Relation or attribute key, e.g. `is_effective_for`.
    pub predicate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    /// Predicate and object as one phrase.
    pub text: String,
    pub source: String,
}

impl From<&Fact> for FactView {
    fn from(f: &Fact) -> Self {
        FactView {
            subject: f.subject_name.clone(),
            predicate: f.route.key().to_string(),
            object: f.object_name.clone(),
            value: f.value.clone(),
            text: f.predicate_text(),
            source: f.source.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub answer: String,
    pub qtype: String,
    pub confidence: f64,
    pub entities: Vec<EntityView>,
    pub facts: Vec<FactView>,
    pub trace_id: String,
    /// Fallback key when the turn was not answered from facts.
    #[serde(default)]
    pub fallback: Option<String>,
}

impl ChatResponse {
    pub fn from_turn(turn: &Turn, trace_id: String) -> Self {
        ChatResponse {
            answer: turn.answer.clone(),
            qtype: turn.qtype.to_string(),
            confidence: turn.confidence,
            entities: turn.entities.iter().map(EntityView::from_linked).collect(),
            facts: turn.facts.iter().map(FactView::from).collect(),
            trace_id,
            fallback: match &turn.outcome {
                Outcome::Answered { .. } => None,
                Outcome::Fallback { reason } => Some(reason.template_key().to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub qtype: String,
    pub confidence: f64,
    pub probabilities: BTreeMap<String, f64>,
}

impl ClassifyResponse {
    pub fn new(log_probs: &[f64; NUM_CLASSES]) -> Self {
        let best = argmax(log_probs);
        ClassifyResponse {
            qtype: QuestionType::ALL[best].to_string(),
            confidence: log_probs[best].exp().clamp(0.0, 1.0),
            probabilities: QuestionType::ALL
                .iter()
                .zip(log_probs)
                .map(|(q, lp)| (q.to_string(), lp.exp()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerResponse {
    pub entities: Vec<EntityView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVersions {
    pub classifier: String,
    pub ner: String,
    pub kb: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_versions: ModelVersions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
