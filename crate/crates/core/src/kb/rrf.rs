use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{Attribute, Concept, KbError, KnowledgeStore, Relation};

struct Rows<'a> {
    file: &'a str,
}

impl Rows<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> KbError {
        KbError::Parse {
            file: self.file.to_string(),
            line,
            message: message.into(),
        }
    }

    /// Non-empty rows as `(line number, fields)`. One trailing `|` is
    /// tolerated; the field count must lie in `min..=max`.
    fn read(
        &self,
        reader: impl BufRead,
        min: usize,
        max: usize,
    ) -> Result<Vec<(usize, Vec<String>)>, KbError> {
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| self.err(n, e.to_string()))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields: Vec<String> = line.split('|').map(|f| f.trim().to_string()).collect();
            if fields.len() > min && fields.last().is_some_and(|f| f.is_empty()) {
                fields.pop();
            }
            if fields.len() < min || fields.len() > max {
                let expected = if min == max {
                    min.to_string()
                } else {
                    format!("{min}-{max}")
                };
                return Err(self.err(
                    n,
                    format!("expected {expected} columns, found {}", fields.len()),
                ));
            }
            out.push((n, fields));
        }
        Ok(out)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, KbError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| KbError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads the three files and checks referential integrity and relation
/// signatures. Errors cite the file path and line.
pub fn parse_rrf(
    conso: impl AsRef<Path>,
    rel: impl AsRef<Path>,
    sat: impl AsRef<Path>,
) -> Result<KnowledgeStore, KbError> {
    let (c, r, s) = (conso.as_ref(), rel.as_ref(), sat.as_ref());
    parse_labeled(
        (&c.display().to_string(), open(c)?),
        (&r.display().to_string(), open(r)?),
        (&s.display().to_string(), open(s)?),
    )
}

/// Like [`parse_rrf`] over in-memory readers; errors name the files
/// `conso`, `rel` and `sat`.
pub fn read_rrf(
    conso: impl BufRead,
    rel: impl BufRead,
    sat: impl BufRead,
) -> Result<KnowledgeStore, KbError> {
    parse_labeled(("conso", conso), ("rel", rel), ("sat", sat))
}

fn parse_labeled(
    (conso_name, conso): (&str, impl BufRead),
    (rel_name, rel): (&str, impl BufRead),
    (sat_name, sat): (&str, impl BufRead),
) -> Result<KnowledgeStore, KbError> {
    let mut store = KnowledgeStore::default();
    let mut by_cui: HashMap<String, usize> = HashMap::new();

    // cui|preferred_name|semantic_type|synonym[|source]
    let rows = Rows { file: conso_name };
    for (n, f) in rows.read(conso, 4, 5)? {
        let semantic_type = f[2].parse().map_err(|e: String| rows.err(n, e))?;
        if f[0].is_empty() || f[1].is_empty() {
            return Err(rows.err(n, "empty cui or preferred name"));
        }
        let source = f.get(4).cloned().unwrap_or_default();
        match by_cui.get(&f[0]) {
            Some(&i) => {
                let c: &mut Concept = &mut store.concepts[i];
                if c.preferred_name != f[1] || c.semantic_type != semantic_type {
                    return Err(rows.err(n, format!("conflicting name or type for {}", f[0])));
                }
                if !f[3].is_empty() && f[3] != c.preferred_name && !c.synonyms.contains(&f[3]) {
                    c.synonyms.push(f[3].clone());
                }
                if c.source.is_empty() {
                    c.source = source;
                }
            }
            None => {
                let synonyms = if f[3].is_empty() || f[3] == f[1] {
                    vec![]
                } else {
                    vec![f[3].clone()]
                };
                by_cui.insert(f[0].clone(), store.concepts.len());
                store.concepts.push(Concept {
                    cui: f[0].clone(),
                    preferred_name: f[1].clone(),
                    semantic_type,
                    synonyms,
                    source,
                });
            }
        }
    }

    // subject_cui|rel_type|object_cui|source
    let rows = Rows { file: rel_name };
    for (n, f) in rows.read(rel, 4, 4)? {
        let rel_type: super::RelationType = f[1].parse().map_err(|e: String| rows.err(n, e))?;
        let lookup = |cui: &str| {
            by_cui
                .get(cui)
                .map(|&i| store.concepts[i].semantic_type)
                .ok_or_else(|| rows.err(n, format!("unknown cui {cui}")))
        };
        let (subject, object) = (lookup(&f[0])?, lookup(&f[2])?);
        let (want_s, want_o) = rel_type.signature();
        if subject != want_s || object != want_o {
            return Err(rows.err(
                n,
                format!("{rel_type} requires ({want_s}, {want_o}) but got ({subject}, {object})"),
            ));
        }
        let relation = Relation {
            subject_cui: f[0].clone(),
            rel_type,
            object_cui: f[2].clone(),
            source: f[3].clone(),
        };
        if store.relations.contains(&relation) {
            log::warn!("{rel_name}:{n}: duplicate relation row ignored");
            continue;
        }
        store.relations.push(relation);
    }

    // cui|name|value|source
    let rows = Rows { file: sat_name };
    for (n, f) in rows.read(sat, 4, 4)? {
        let name = f[1].parse().map_err(|e: String| rows.err(n, e))?;
        if !by_cui.contains_key(&f[0]) {
            return Err(rows.err(n, format!("unknown cui {}", f[0])));
        }
        if f[2].is_empty() {
            return Err(rows.err(n, "empty attribute value"));
        }
        store.attributes.push(Attribute {
            cui: f[0].clone(),
            name,
            value: f[2].clone(),
            source: f[3].clone(),
        });
    }

    log::info!(
        "parsed {} concepts, {} relations, {} attributes",
        store.concepts.len(),
        store.relations.len(),
        store.attributes.len()
    );
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{RelationType, SemanticType};

    const CONSO: &str = "C1|Shark Cartilage|SDSI|\nC1|Shark Cartilage|SDSI|shark cartilage extract\nC2|Degenerative Polyarthritis|DIS|Osteoarthritis|\nC3|Cartilage Plus|DSP|\n";

    #[test]
    fn parses_small_store() {
        let rel = "C1|is_effective_for|C2|NMCD\n\n";
        let sat = "C1|background|Cartilage from sharks.|NMCD|\n";
        let s = read_rrf(CONSO.as_bytes(), rel.as_bytes(), sat.as_bytes()).unwrap();
        assert_eq!(s.concepts.len(), 3);
        assert_eq!(s.concepts[0].synonyms, ["shark cartilage extract"]);
        assert_eq!(s.concepts[1].synonyms, ["Osteoarthritis"]);
        assert_eq!(s.concepts[2].semantic_type, SemanticType::Dsp);
        assert_eq!(s.relations[0].rel_type, RelationType::IsEffectiveFor);
        assert_eq!(s.attributes[0].value, "Cartilage from sharks.");
    }

    #[test]
    fn empty_relation_file_is_valid() {
        let s = read_rrf(CONSO.as_bytes(), "".as_bytes(), "".as_bytes()).unwrap();
        assert!(s.relations.is_empty());
    }

    fn parse_err(conso: &str, rel: &str, sat: &str) -> String {
        read_rrf(conso.as_bytes(), rel.as_bytes(), sat.as_bytes())
            .unwrap_err()
            .to_string()
    }

    #[test]
    fn signature_violation_is_rejected() {
        let msg = parse_err(CONSO, "C3|is_effective_for|C2|NMCD\n", "");
        assert!(msg.starts_with("rel:1:"), "{msg}");
        assert!(msg.contains("requires (SDSI, DIS)"), "{msg}");
    }

    #[test]
    fn errors_cite_file_and_line() {
        assert!(parse_err(CONSO, "C1|is_effective_for|C9|NMCD\n", "")
            .starts_with("rel:1: unknown cui C9"));
        assert!(parse_err(CONSO, "C1|cures|C2|x\n", "").starts_with("rel:1:"));
        assert!(parse_err("C1|A|XYZ|\n", "", "").starts_with("conso:1:"));
        assert!(parse_err(CONSO, "\nC1|is_effective_for|C2\n", "")
            .starts_with("rel:2: expected 4 columns"));
        assert!(parse_err(CONSO, "", "C1|dose|10 mg|x\n").starts_with("sat:1:"));
        assert!(parse_err(CONSO, "", "C7|usage|10 mg|x\n").starts_with("sat:1: unknown cui"));
        assert!(parse_err("C1|A|SDSI|\nC1|B|SDSI|\n", "", "").starts_with("conso:2: conflicting"));
    }
}
