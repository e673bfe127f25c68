use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Attribute, AttributeName, Concept, KbError, KnowledgeStore, Relation, RelationType};
use crate::textproc::is_punctuation;

pub const SCHEMA_VERSION: u32 = 1;

const CONCEPTS_FILE: &str = "concepts.json";

/// Lowercase, drop punctuation, collapse whitespace.
pub fn normalize_name(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !is_punctuation(*c))
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Normalized,
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameMatch {
    pub cui: String,
    pub kind: MatchKind,
}

/// Immutable, validated view of a [`KnowledgeStore`] with name and
/// adjacency indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    concepts: BTreeMap<String, Concept>,
    relations: BTreeMap<RelationType, Vec<Relation>>,
    attributes: BTreeMap<(String, AttributeName), Vec<Attribute>>,
    exact: BTreeMap<String, BTreeSet<String>>,
    normalized: BTreeMap<String, BTreeSet<String>>,
    by_subject: BTreeMap<(RelationType, String), Vec<usize>>,
    by_object: BTreeMap<(RelationType, String), Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ConceptsFile {
    schema_version: u32,
    concepts: Vec<Concept>,
    attributes: Vec<Attribute>,
}

#[derive(Serialize, Deserialize)]
struct RelationRecord {
    subject_cui: String,
    subject_name: String,
    object_cui: String,
    object_name: String,
    source: String,
}

#[derive(Serialize, Deserialize)]
struct RelationFile {
    schema_version: u32,
    relation: RelationType,
    relations: Vec<RelationRecord>,
}

impl KnowledgeIndex {
    /// Validates uniqueness, referential integrity and relation signatures.
    pub fn build(store: &KnowledgeStore) -> Result<Self, KbError> {
        let mut concepts = BTreeMap::new();
        for c in &store.concepts {
            if concepts.insert(c.cui.clone(), c.clone()).is_some() {
                return Err(KbError::Integrity(format!("duplicate cui {}", c.cui)));
            }
        }
        let mut exact: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut normalized: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in concepts.values() {
            for name in std::iter::once(&c.preferred_name).chain(&c.synonyms) {
                exact.entry(name.clone()).or_default().insert(c.cui.clone());
                let key = normalize_name(name);
                if !key.is_empty() {
                    normalized.entry(key).or_default().insert(c.cui.clone());
                }
            }
        }
        let mut relations: BTreeMap<RelationType, Vec<Relation>> = BTreeMap::new();
        for r in &store.relations {
            let ty = |cui: &str| {
                concepts
                    .get(cui)
                    .map(|c: &Concept| c.semantic_type)
                    .ok_or_else(|| {
                        KbError::Integrity(format!(
                            "{} relation references unknown cui {cui}",
                            r.rel_type
                        ))
                    })
            };
            let got = (ty(&r.subject_cui)?, ty(&r.object_cui)?);
            if got != r.rel_type.signature() {
                return Err(KbError::Integrity(format!(
                    "{} {} -> {}: semantic types {:?} violate the signature",
                    r.rel_type, r.subject_cui, r.object_cui, got
                )));
            }
            relations.entry(r.rel_type).or_default().push(r.clone());
        }
        let mut by_subject: BTreeMap<(RelationType, String), Vec<usize>> = BTreeMap::new();
        let mut by_object: BTreeMap<(RelationType, String), Vec<usize>> = BTreeMap::new();
        for (&rt, rows) in &relations {
            for (i, r) in rows.iter().enumerate() {
                by_subject
                    .entry((rt, r.subject_cui.clone()))
                    .or_default()
                    .push(i);
                by_object
                    .entry((rt, r.object_cui.clone()))
                    .or_default()
                    .push(i);
            }
        }
        let mut attributes: BTreeMap<(String, AttributeName), Vec<Attribute>> = BTreeMap::new();
        for a in &store.attributes {
            if !concepts.contains_key(&a.cui) {
                return Err(KbError::Integrity(format!(
                    "attribute references unknown cui {}",
                    a.cui
                )));
            }
            attributes
                .entry((a.cui.clone(), a.name))
                .or_default()
                .push(a.clone());
        }
        Ok(KnowledgeIndex {
            concepts,
            relations,
            attributes,
            exact,
            normalized,
            by_subject,
            by_object,
        })
    }

    pub fn concept(&self, cui: &str) -> Option<&Concept> {
        self.concepts.get(cui)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn relations(&self, rel_type: RelationType) -> &[Relation] {
        self.relations.get(&rel_type).map_or(&[], Vec::as_slice)
    }

    fn adjacent<'a>(
        &'a self,
        map: &'a BTreeMap<(RelationType, String), Vec<usize>>,
        rel_type: RelationType,
        cui: &str,
    ) -> impl Iterator<Item = &'a Relation> {
        let rows = self.relations(rel_type);
        map.get(&(rel_type, cui.to_string()))
            .into_iter()
            .flatten()
            .map(move |&i| &rows[i])
    }

    /// Relations of `rel_type` whose subject is `cui`, in file order.
    pub fn outgoing(&self, rel_type: RelationType, cui: &str) -> impl Iterator<Item = &Relation> {
        self.adjacent(&self.by_subject, rel_type, cui)
    }

    /// Relations of `rel_type` whose object is `cui`, in file order.
    pub fn incoming(&self, rel_type: RelationType, cui: &str) -> impl Iterator<Item = &Relation> {
        self.adjacent(&self.by_object, rel_type, cui)
    }

    pub fn attributes(&self, cui: &str, name: AttributeName) -> &[Attribute] {
        self.attributes
            .get(&(cui.to_string(), name))
            .map_or(&[], Vec::as_slice)
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.values().map(Vec::len).sum()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.values().map(Vec::len).sum()
    }

    /// Cuis whose normalized names share the key exactly.
    pub fn cuis_for_normalized(&self, key: &str) -> Option<&BTreeSet<String>> {
        self.normalized.get(key)
    }

    fn name_of(&self, cui: &str) -> String {
        self.concepts
            .get(cui)
            .map(|c| c.preferred_name.clone())
            .unwrap_or_default()
    }

    /// Writes `concepts.json` (concepts and attributes) and one
    /// `<relation>.json` per relation type, each with denormalized names.
    pub fn export_json(&self, dir: impl AsRef<Path>) -> Result<(), KbError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| KbError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let concepts = ConceptsFile {
            schema_version: SCHEMA_VERSION,
            concepts: self.concepts.values().cloned().collect(),
            attributes: self.attributes.values().flatten().cloned().collect(),
        };
        write_json(&dir.join(CONCEPTS_FILE), &concepts)?;
        for &rt in RelationType::ALL {
            let relations = self
                .relations(rt)
                .iter()
                .map(|r| RelationRecord {
                    subject_cui: r.subject_cui.clone(),
                    subject_name: self.name_of(&r.subject_cui),
                    object_cui: r.object_cui.clone(),
                    object_name: self.name_of(&r.object_cui),
                    source: r.source.clone(),
                })
                .collect();
            let file = RelationFile {
                schema_version: SCHEMA_VERSION,
                relation: rt,
                relations,
            };
            write_json(&dir.join(format!("{rt}.json")), &file)?;
        }
        Ok(())
    }

    /// Reads a directory written by [`export_json`](Self::export_json).
    pub fn import_json(dir: impl AsRef<Path>) -> Result<Self, KbError> {
        let dir = dir.as_ref();
        let concepts: ConceptsFile = read_json(&dir.join(CONCEPTS_FILE))?;
        let mut store = KnowledgeStore {
            concepts: concepts.concepts,
            relations: Vec::new(),
            attributes: concepts.attributes,
        };
        for &rt in RelationType::ALL {
            let path = dir.join(format!("{rt}.json"));
            let file: RelationFile = read_json(&path)?;
            if file.relation != rt {
                return Err(KbError::Integrity(format!(
                    "{} holds {} rows",
                    path.display(),
                    file.relation
                )));
            }
            store
                .relations
                .extend(file.relations.into_iter().map(|r| Relation {
                    subject_cui: r.subject_cui,
                    rel_type: rt,
                    object_cui: r.object_cui,
                    source: r.source,
                }));
        }
        Self::build(&store)
    }

    /// Concept matches for a surface string in three tiers: exact name,
    /// normalized name, then (if `allow_prefix`) normalized-name prefix.
    /// Each cui appears once, at its best tier; within a tier matches are
    /// ordered by preferred name, then cui.
    pub fn lookup(&self, surface: &str, allow_prefix: bool) -> Vec<NameMatch> {
        let key = normalize_name(surface);
        if key.is_empty() {
            return Vec::new();
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut tier = |cuis: Vec<&String>, kind: MatchKind| {
            let mut fresh: Vec<&String> = cuis
                .into_iter()
                .filter(|c| seen.insert((*c).clone()))
                .collect();
            fresh.sort_by_key(|c| (self.name_of(c), (*c).clone()));
            out.extend(fresh.into_iter().map(|c| NameMatch {
                cui: c.clone(),
                kind,
            }));
        };
        tier(
            self.exact.get(surface).into_iter().flatten().collect(),
            MatchKind::Exact,
        );
        tier(
            self.normalized.get(&key).into_iter().flatten().collect(),
            MatchKind::Normalized,
        );
        if allow_prefix {
            let cuis = self
                .normalized
                .range(key.clone()..)
                .take_while(|(k, _)| k.starts_with(&key))
                .flat_map(|(_, v)| v)
                .collect();
            tier(cuis, MatchKind::Prefix);
        }
        out
    }
}

pub fn lookup_entity(index: &KnowledgeIndex, surface: &str, allow_prefix: bool) -> Vec<NameMatch> {
    index.lookup(surface, allow_prefix)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), KbError> {
    let json = serde_json::to_string_pretty(value).map_err(|source| KbError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, json + "\n").map_err(|source| KbError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, KbError> {
    let text = fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| KbError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(KbError::Version {
            path: path.to_path_buf(),
            expected: SCHEMA_VERSION,
            found,
        });
    }
    serde_json::from_value(value).map_err(|source| KbError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::SemanticType;

    fn concept(cui: &str, name: &str, st: SemanticType, synonyms: &[&str]) -> Concept {
        Concept {
            cui: cui.into(),
            preferred_name: name.into(),
            semantic_type: st,
            synonyms: synonyms.iter().map(|s| s.to_string()).collect(),
            source: String::new(),
        }
    }

    fn index() -> KnowledgeIndex {
        let store = KnowledgeStore {
            concepts: vec![
                concept(
                    "C1",
                    "St. John's Wort",
                    SemanticType::Sdsi,
                    &["st johns wort"],
                ),
                concept("C2", "Melatonin", SemanticType::Sdsi, &[]),
                concept("C3", "ginseng", SemanticType::Sdsi, &["Panax"]),
                concept("C4", "Ginseng Complex", SemanticType::Dsp, &[]),
            ],
            relations: vec![],
            attributes: vec![],
        };
        KnowledgeIndex::build(&store).unwrap()
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_name("St. John's  Wort"), "st johns wort");
        assert_eq!(normalize_name("  \t"), "");
        let idx = index();
        assert_eq!(idx.cuis_for_normalized("st johns wort").unwrap().len(), 1);
    }

    #[test]
    fn lookup_tiers() {
        let idx = index();
        assert_eq!(
            idx.lookup("Melatonin", false),
            [NameMatch {
                cui: "C2".into(),
                kind: MatchKind::Exact
            }]
        );
        assert_eq!(
            idx.lookup("melatonin", false)[0].kind,
            MatchKind::Normalized
        );
        assert!(idx.lookup("", true).is_empty());
        assert!(idx.lookup("gins", false).is_empty());
        let m = idx.lookup("gins", true);
        assert_eq!(
            m.iter().map(|x| x.cui.as_str()).collect::<Vec<_>>(),
            ["C4", "C3"]
        );
        assert!(m.iter().all(|x| x.kind == MatchKind::Prefix));
        // exact match on "ginseng" outranks the prefix hit on "Ginseng Complex"
        let m = idx.lookup("ginseng", true);
        assert_eq!((m[0].cui.as_str(), m[0].kind), ("C3", MatchKind::Exact));
        assert_eq!((m[1].cui.as_str(), m[1].kind), ("C4", MatchKind::Prefix));
    }

    #[test]
    fn dangling_reference_fails_build() {
        let mut store = KnowledgeStore {
            concepts: vec![concept("C1", "x", SemanticType::Sdsi, &[])],
            ..Default::default()
        };
        store.attributes.push(Attribute {
            cui: "C9".into(),
            name: AttributeName::Usage,
            value: "v".into(),
            source: "s".into(),
        });
        assert!(matches!(
            KnowledgeIndex::build(&store),
            Err(KbError::Integrity(_))
        ));
    }
}
