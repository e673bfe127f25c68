use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AttributeName, KnowledgeIndex, RelationType};
use crate::corpus::{EntityType, QuestionType};

pub const DEFAULT_MAX_FACTS: usize = 5;

/// Where a question type looks for its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "name")]
pub enum Route {
    Relation(RelationType),
    /// `has_ingredient` followed from object to subject: products that
    /// contain the ingredient.
    InverseRelation(RelationType),
    Attribute(AttributeName),
}

impl Route {
    /// Template key, e.g. `is_effective_for`, `products_containing`, `safety`.
    pub fn key(self) -> &'static str {
        match self {
            Route::Relation(r) => r.as_str(),
            Route::InverseRelation(RelationType::HasIngredient) => "products_containing",
            Route::InverseRelation(r) => r.as_str(),
            Route::Attribute(a) => a.as_str(),
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Routing table from question type to relations and attributes.
pub fn routes(qtype: QuestionType) -> Vec<Route> {
    use AttributeName as A;
    use RelationType as R;
    match qtype {
        QuestionType::Interaction => vec![Route::Relation(R::InteractsWith)],
        QuestionType::Usage => vec![Route::Attribute(A::Usage)],
        QuestionType::Effectiveness => vec![Route::Relation(R::IsEffectiveFor)],
        QuestionType::AdverseEffects => {
            vec![
                Route::Relation(R::HasAdverseEffectOn),
                Route::Relation(R::HasAdverseReaction),
            ]
        }
        QuestionType::Indication => vec![
            Route::Relation(R::IsEffectiveFor),
            Route::Relation(R::HasTherapeuticClass),
        ],
        QuestionType::Background => vec![Route::Attribute(A::Background)],
        QuestionType::Safety => vec![Route::Attribute(A::Safety)],
        QuestionType::Availability => vec![Route::InverseRelation(R::HasIngredient)],
    }
}

/// One retrieved answer unit. Relation facts carry an object; attribute
/// facts carry a value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub route: Route,
    pub subject_cui: String,
    pub subject_name: String,
    pub object_cui: Option<String>,
    pub object_name: Option<String>,
    pub value: Option<String>,
    pub source: String,
}

impl Fact {
    /// Predicate text without the subject, e.g. "is effective for Degenerative
    /// Polyarthritis", or the attribute value.
    pub fn predicate_text(&self) -> String {
        match (self.route, &self.object_name, &self.value) {
            (Route::Relation(r), Some(o), _) => format!("{} {o}", r.phrase()),
            (Route::InverseRelation(_), Some(o), _) => format!("is an ingredient of {o}"),
            (_, _, Some(v)) => v.clone(),
            _ => String::new(),
        }
    }
}

/// Facts answering `qtype` about the first entity. A second entity
/// restricts relation facts to that object; further entities are ignored.
/// Results are sorted by source, then object name, and capped at
/// `max_facts`.
pub fn query(
    index: &KnowledgeIndex,
    qtype: QuestionType,
    entities: &[(EntityType, String)],
    max_facts: usize,
) -> Vec<Fact> {
    let Some((_, subject)) = entities.first() else {
        return Vec::new();
    };
    let Some(concept) = index.concept(subject) else {
        return Vec::new();
    };
    let restriction = entities.get(1).map(|(_, cui)| cui.as_str());
    let name = |cui: &str| index.concept(cui).map(|c| c.preferred_name.clone());
    let mut facts = Vec::new();
    for route in routes(qtype) {
        match route {
            Route::Relation(rt) => {
                for r in index.outgoing(rt, subject) {
                    if restriction.is_some_and(|o| o != r.object_cui) {
                        continue;
                    }
                    facts.push(Fact {
                        route,
                        subject_cui: subject.clone(),
                        subject_name: concept.preferred_name.clone(),
                        object_cui: Some(r.object_cui.clone()),
                        object_name: name(&r.object_cui),
                        value: None,
                        source: r.source.clone(),
                    });
                }
            }
            Route::InverseRelation(rt) => {
                for r in index.incoming(rt, subject) {
                    if restriction.is_some_and(|o| o != r.subject_cui) {
                        continue;
                    }
                    facts.push(Fact {
                        route,
                        subject_cui: subject.clone(),
                        subject_name: concept.preferred_name.clone(),
                        object_cui: Some(r.subject_cui.clone()),
                        object_name: name(&r.subject_cui),
                        value: None,
                        source: r.source.clone(),
                    });
                }
            }
            Route::Attribute(a) => {
                for attr in index.attributes(subject, a) {
                    facts.push(Fact {
                        route,
                        subject_cui: subject.clone(),
                        subject_name: concept.preferred_name.clone(),
                        object_cui: None,
                        object_name: None,
                        value: Some(attr.value.clone()),
                        source: attr.source.clone(),
                    });
                }
            }
        }
    }
    facts.sort_by(|a, b| {
        (&a.source, &a.object_name, a.route, &a.object_cui, &a.value).cmp(&(
            &b.source,
            &b.object_name,
            b.route,
            &b.object_cui,
            &b.value,
        ))
    });
    facts.truncate(max_facts);
    facts
}
