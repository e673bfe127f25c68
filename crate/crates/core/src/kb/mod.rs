//! Dietary-supplement knowledge store: pipe-delimited concept, relation and
//! attribute files, an in-memory index with name lookup, per-relation JSON
//! export, and question-type routed queries.

mod index;
mod query;
mod rrf;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{
    lookup_entity, normalize_name, KnowledgeIndex, MatchKind, NameMatch, SCHEMA_VERSION,
};
pub use query::{query, routes, Fact, Route, DEFAULT_MAX_FACTS};
pub use rrf::{parse_rrf, read_rrf};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Integrity(String),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: unsupported schema_version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
}

macro_rules! symbolic_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} {s:?}", stringify!($name))),
                }
            }
        }
    };
}

symbolic_enum!(
    /// Concept categories.
    SemanticType {
        Sdsi => "SDSI",
        Dsp => "DSP",
        Dis => "DIS",
        Spd => "SPD",
        Soc => "SOC",
        Ss => "SS",
        Tc => "TC",
    }
);

symbolic_enum!(
    RelationType {
        HasAdverseEffectOn => "has_adverse_effect_on",
        HasAdverseReaction => "has_adverse_reaction",
        HasIngredient => "has_ingredient",
        HasTherapeuticClass => "has_therapeutic_class",
        InteractsWith => "interacts_with",
        IsEffectiveFor => "is_effective_for",
    }
);

symbolic_enum!(
    /// Free-text facts attached to a concept.
    AttributeName {
        Background => "background",
        Safety => "safety",
        Usage => "usage",
    }
);

impl RelationType {
    /// Required (subject, object) semantic types.
    pub fn signature(self) -> (SemanticType, SemanticType) {
        use SemanticType::*;
        match self {
            RelationType::HasAdverseEffectOn => (Sdsi, Soc),
            RelationType::HasAdverseReaction => (Sdsi, Ss),
            RelationType::HasIngredient => (Dsp, Sdsi),
            RelationType::HasTherapeuticClass => (Sdsi, Tc),
            RelationType::InteractsWith => (Sdsi, Spd),
            RelationType::IsEffectiveFor => (Sdsi, Dis),
        }
    }

    /// The relation name as words, e.g. "is effective for".
    pub fn phrase(self) -> String {
        self.as_str().replace('_', " ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub cui: String,
    pub preferred_name: String,
    pub semantic_type: SemanticType,
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject_cui: String,
    pub rel_type: RelationType,
    pub object_cui: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub cui: String,
    pub name: AttributeName,
    pub value: String,
    pub source: String,
}

/// Parsed rows, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeStore {
    pub concepts: Vec<Concept>,
    pub relations: Vec<Relation>,
    pub attributes: Vec<Attribute>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbolic_names_round_trip() {
        for r in RelationType::ALL {
            assert_eq!(r.as_str().parse::<RelationType>().unwrap(), *r);
        }
        assert_eq!(SemanticType::ALL.len(), 7);
        assert_eq!(RelationType::ALL.len(), 6);
        assert!("SDSX".parse::<SemanticType>().is_err());
        assert_eq!(RelationType::IsEffectiveFor.phrase(), "is effective for");
        assert_eq!(
            serde_json::to_string(&SemanticType::Sdsi).unwrap(),
            "\"SDSI\""
        );
    }
}
