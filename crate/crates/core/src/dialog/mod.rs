//! Per-turn orchestration: classify, tag, link, query, render.

mod templates;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use templates::{
    qtype_phrase, render, TemplateSet, LOW_CONFIDENCE, NO_ANSWER, NO_ENTITY, UNRESOLVED_ENTITY,
};

use crate::classifier::{ClassifierModel, QuestionClassifier};
use crate::corpus::{EntitySpan, EntityType, QuestionType};
use crate::kb::{query, routes, Fact, KnowledgeIndex, MatchKind, Route, DEFAULT_MAX_FACTS};
use crate::ner::{predict_entities, NerModel};

#[derive(Debug, Error)]
pub enum DialogError {
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid pipeline config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Below this classifier probability the agent asks for clarification.
    pub confidence_floor: f64,
    pub max_facts: usize,
    /// Allow normalized-name prefix matches when linking entities.
    pub allow_prefix: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            confidence_floor: 0.4,
            max_facts: DEFAULT_MAX_FACTS,
            allow_prefix: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), DialogError> {
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(DialogError::Config(
                "confidence_floor must lie in [0, 1]".into(),
            ));
        }
        if self.max_facts == 0 {
            return Err(DialogError::Config("max_facts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Classify,
    Ner,
    Link,
    Query,
    Render,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    LowConfidence,
    NoEntity,
    UnresolvedEntity,
    NoAnswer,
}

impl FallbackReason {
    pub fn template_key(self) -> &'static str {
        match self {
            FallbackReason::LowConfidence => LOW_CONFIDENCE,
            FallbackReason::NoEntity => NO_ENTITY,
            FallbackReason::UnresolvedEntity => UNRESOLVED_ENTITY,
            FallbackReason::NoAnswer => NO_ANSWER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Outcome {
    Answered { routes: Vec<Route> },
    Fallback { reason: FallbackReason },
}

/// Stage decisions plus wall-clock timings. Timings vary run to run; use
/// [`Turn::without_timings`] before comparing turns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    /// Microseconds spent per stage, in execution order.
    pub timings_us: Vec<(Stage, u64)>,
}

impl Trace {
    fn note(&mut self, stage: Stage, message: impl Into<String>) {
        self.events.push(TraceEvent {
            stage,
            message: message.into(),
        });
    }

    fn time(&mut self, stage: Stage, since: Instant) {
        self.timings_us
            .push((stage, since.elapsed().as_micros() as u64));
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut out: Vec<Stage> = Vec::new();
        for e in &self.events {
            if out.last() != Some(&e.stage) {
                out.push(e.stage);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedEntity {
    pub span: EntitySpan,
    pub cui: Option<String>,
    pub concept_name: Option<String>,
    pub match_kind: Option<MatchKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub user_text: String,
    pub qtype: QuestionType,
    pub confidence: f64,
    pub entities: Vec<LinkedEntity>,
    pub facts: Vec<Fact>,
    pub answer: String,
    pub outcome: Outcome,
    pub trace: Trace,
}

impl Turn {
    pub fn without_timings(mut self) -> Self {
        self.trace.timings_us.clear();
        self
    }
}

/// Everything needed to answer a turn. Immutable once assembled, so one
/// pipeline can serve concurrent turns.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub classifier: ClassifierModel,
    pub ner: NerModel,
    pub index: KnowledgeIndex,
    pub templates: TemplateSet,
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(
        classifier: ClassifierModel,
        ner: NerModel,
        index: KnowledgeIndex,
        templates: TemplateSet,
        config: PipelineConfig,
    ) -> Result<Self, DialogError> {
        config.validate()?;
        Ok(Pipeline {
            classifier,
            ner,
            index,
            templates,
            config,
        })
    }

    pub fn handle_turn(&self, user_text: &str) -> Turn {
        handle_turn(self, user_text)
    }

    fn link(&self, span: EntitySpan) -> LinkedEntity {
        let best = self
            .index
            .lookup(&span.surface, self.config.allow_prefix)
            .into_iter()
            .next();
        let concept_name = best
            .as_ref()
            .and_then(|m| self.index.concept(&m.cui))
            .map(|c| c.preferred_name.clone());
        LinkedEntity {
            cui: best.as_ref().map(|m| m.cui.clone()),
            match_kind: best.map(|m| m.kind),
            concept_name,
            span,
        }
    }
}

fn top_two(classifier: &ClassifierModel, text: &str) -> (QuestionType, QuestionType) {
    let lp = classifier.log_probs(text);
    let mut order: Vec<usize> = (0..lp.len()).collect();
    // stable sort keeps the tie-break order of QuestionType::ALL
    order.sort_by(|&a, &b| {
        lp[b]
            .partial_cmp(&lp[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    (QuestionType::ALL[order[0]], QuestionType::ALL[order[1]])
}

const GENERIC_REPLY: &str = "Sorry, I could not find an answer to that question.";

/// Answers one user turn. Never fails: every problem becomes a fallback
/// answer, and the trace names the route taken or the fallback reason.
pub fn handle_turn(pipeline: &Pipeline, user_text: &str) -> Turn {
    let mut turn = answer_turn(pipeline, user_text);
    if turn.answer.trim().is_empty() {
        turn.trace.note(
            Stage::Render,
            "template rendered empty; using generic reply",
        );
        turn.answer = GENERIC_REPLY.to_string();
    }
    turn
}

fn answer_turn(pipeline: &Pipeline, user_text: &str) -> Turn {
    let mut trace = Trace::default();

    let t = Instant::now();
    let (qtype, confidence) = pipeline.classifier.predict_qtype(user_text);
    trace.note(Stage::Classify, format!("{qtype} p={confidence:.4}"));
    trace.time(Stage::Classify, t);

    let t = Instant::now();
    let spans = predict_entities(&pipeline.ner, user_text);
    trace.note(
        Stage::Ner,
        if spans.is_empty() {
            "no entities".to_string()
        } else {
            spans
                .iter()
                .map(|s| format!("{}:{} [{}..{})", s.surface, s.etype, s.start, s.end))
                .collect::<Vec<_>>()
                .join(", ")
        },
    );
    trace.time(Stage::Ner, t);

    let t = Instant::now();
    let entities: Vec<LinkedEntity> = spans.into_iter().map(|s| pipeline.link(s)).collect();
    for e in &entities {
        match (&e.cui, e.match_kind) {
            (Some(cui), Some(kind)) => trace.note(
                Stage::Link,
                format!("{} -> {cui} ({kind:?})", e.span.surface),
            ),
            _ => trace.note(Stage::Link, format!("{} unresolved", e.span.surface)),
        }
    }
    if entities.is_empty() {
        trace.note(Stage::Link, "nothing to link");
    }
    trace.time(Stage::Link, t);

    let mut turn = Turn {
        user_text: user_text.to_string(),
        qtype,
        confidence,
        entities,
        facts: Vec::new(),
        answer: String::new(),
        outcome: Outcome::Fallback {
            reason: FallbackReason::NoEntity,
        },
        trace,
    };

    let t = Instant::now();
    let fallback = |turn: &mut Turn, reason: FallbackReason, values: &[(&str, &str)]| {
        turn.trace
            .note(Stage::Render, format!("fallback {}", reason.template_key()));
        turn.answer = pipeline.templates.fill(reason.template_key(), values);
        turn.outcome = Outcome::Fallback { reason };
    };

    if confidence < pipeline.config.confidence_floor {
        let (a, b) = top_two(&pipeline.classifier, user_text);
        turn.trace.note(
            Stage::Query,
            format!(
                "confidence {confidence:.4} below floor {}",
                pipeline.config.confidence_floor
            ),
        );
        fallback(
            &mut turn,
            FallbackReason::LowConfidence,
            &[("first", qtype_phrase(a)), ("second", qtype_phrase(b))],
        );
        turn.trace.time(Stage::Render, t);
        return turn;
    }

    // Subject: first linked DS mention; restriction: next linked DS/MED/DIS mention.
    let linked: Vec<&LinkedEntity> = turn.entities.iter().filter(|e| e.cui.is_some()).collect();
    let subject = linked.iter().position(|e| e.span.etype == EntityType::DS);
    let Some(si) = subject else {
        let unresolved_ds = turn
            .entities
            .iter()
            .find(|e| e.span.etype == EntityType::DS && e.cui.is_none());
        match unresolved_ds {
            Some(e) => {
                let surface = e.span.surface.clone();
                turn.trace.note(
                    Stage::Query,
                    format!("supplement {surface:?} not in knowledge base"),
                );
                fallback(
                    &mut turn,
                    FallbackReason::UnresolvedEntity,
                    &[("entity", &surface)],
                );
            }
            None => {
                turn.trace.note(Stage::Query, "no supplement mention");
                fallback(&mut turn, FallbackReason::NoEntity, &[]);
            }
        }
        turn.trace.time(Stage::Render, t);
        return turn;
    };
    let subject = linked[si];
    let restriction = linked
        .iter()
        .enumerate()
        .find(|(i, e)| {
            *i != si
                && matches!(
                    e.span.etype,
                    EntityType::DS | EntityType::MED | EntityType::DIS
                )
        })
        .map(|(i, e)| (i, *e));
    let mut args = vec![(subject.span.etype, subject.cui.clone().expect("linked"))];
    if let Some((_, r)) = restriction {
        args.push((r.span.etype, r.cui.clone().expect("linked")));
    }
    let ignored = linked.len() - args.len();
    let route_names: Vec<String> = routes(qtype).iter().map(|r| r.to_string()).collect();
    turn.trace.note(
        Stage::Query,
        format!(
            "routes [{}] subject {}{}",
            route_names.join(", "),
            args[0].1,
            args.get(1)
                .map(|(_, c)| format!(" restricted to {c}"))
                .unwrap_or_default()
        ),
    );
    if ignored > 0 {
        turn.trace
            .note(Stage::Query, format!("{ignored} further entities ignored"));
    }
    turn.facts = query(&pipeline.index, qtype, &args, pipeline.config.max_facts);
    turn.trace
        .note(Stage::Query, format!("{} facts", turn.facts.len()));
    turn.trace.time(Stage::Query, t);
    let t = Instant::now();

    let subject_name = subject
        .concept_name
        .clone()
        .unwrap_or_else(|| subject.span.surface.clone());
    if turn.facts.is_empty() {
        fallback(
            &mut turn,
            FallbackReason::NoAnswer,
            &[("ds", &subject_name), ("qtype", qtype_phrase(qtype))],
        );
    } else {
        let mut fired: Vec<Route> = Vec::new();
        for f in &turn.facts {
            if !fired.contains(&f.route) {
                fired.push(f.route);
            }
        }
        turn.trace.note(
            Stage::Render,
            format!(
                "answered via {}",
                fired
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        );
        turn.answer = render(&pipeline.templates, qtype, &turn.facts, &subject_name);
        turn.outcome = Outcome::Answered { routes: fired };
    }
    turn.trace.time(Stage::Render, t);
    turn
}
