//! Labeled questions, the line-delimited JSON corpus format, BIO encoding,
//! stratified folds and the synthetic corpus generator.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::{char_slice, tokenize, Token};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown {kind} label {label:?}")]
    UnknownLabel {
        line: usize,
        kind: &'static str,
        label: String,
    },
    #[error("record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("cannot split {samples} samples into {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("template {template:?} references unknown slot {{{slot}}}")]
    UnknownSlot { template: String, slot: String },
    #[error("gazetteer for {0} is empty but referenced by a template")]
    EmptyGazetteer(EntityType),
    #[error("invalid synthetic corpus config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
#[error("unknown label {0:?}")]
pub struct LabelError(pub String);

/// The eight question types, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    Interaction,
    Usage,
    Effectiveness,
    AdverseEffects,
    Indication,
    Background,
    Safety,
    Availability,
}

impl QuestionType {
    pub const ALL: [QuestionType; 8] = [
        QuestionType::Interaction,
        QuestionType::Usage,
        QuestionType::Effectiveness,
        QuestionType::AdverseEffects,
        QuestionType::Indication,
        QuestionType::Background,
        QuestionType::Safety,
        QuestionType::Availability,
    ];
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Interaction => "Interaction",
            QuestionType::Usage => "Usage",
            QuestionType::Effectiveness => "Effectiveness",
            QuestionType::AdverseEffects => "AdverseEffects",
            QuestionType::Indication => "Indication",
            QuestionType::Background => "Background",
            QuestionType::Safety => "Safety",
            QuestionType::Availability => "Availability",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionType {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| LabelError(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    DS,
    DIS,
    MED,
    MISC,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [
        EntityType::DS,
        EntityType::DIS,
        EntityType::MED,
        EntityType::MISC,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::DS => "DS",
            EntityType::DIS => "DIS",
            EntityType::MED => "MED",
            EntityType::MISC => "MISC",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| LabelError(s.to_string()))
    }
}

/// A typed entity mention; `start..end` are char offsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: EntityType,
    pub surface: String,
}

impl EntitySpan {
    /// Builds a span whose surface is cut from `text`.
    pub fn from_text(text: &str, start: usize, end: usize, etype: EntityType) -> Self {
        EntitySpan {
            start,
            end,
            etype,
            surface: char_slice(text, start, end),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuestion {
    pub id: String,
    pub text: String,
    pub qtype: QuestionType,
    pub entities: Vec<EntitySpan>,
}

impl LabeledQuestion {
    /// Validates spans against `text`, sorts them by start offset and fills
    /// in their surfaces.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        qtype: QuestionType,
        spans: impl IntoIterator<Item = (usize, usize, EntityType)>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let text = text.into();
        let len = text.chars().count();
        let mut entities: Vec<EntitySpan> = Vec::new();
        for (start, end, etype) in spans {
            if start >= end {
                return Err(CorpusError::InvalidRecord {
                    id,
                    message: format!("empty or reversed span {start}..{end}"),
                });
            }
            if end > len {
                return Err(CorpusError::InvalidRecord {
                    id,
                    message: format!("span {start}..{end} exceeds text length {len}"),
                });
            }
            entities.push(EntitySpan::from_text(&text, start, end, etype));
        }
        entities.sort_by_key(|e| (e.start, e.end));
        if let Some(w) = entities.windows(2).find(|w| w[1].start < w[0].end) {
            return Err(CorpusError::InvalidRecord {
                id,
                message: format!(
                    "overlapping spans {}..{} and {}..{}",
                    w[0].start, w[0].end, w[1].start, w[1].end
                ),
            });
        }
        Ok(LabeledQuestion {
            id,
            text,
            qtype,
            entities,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpan {
    start: usize,
    end: usize,
    etype: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
    qtype: String,
    #[serde(default)]
    entities: Vec<RawSpan>,
}

/// Loads a line-delimited JSON corpus. Blank lines are skipped; records
/// without an `id` get `line-<n>`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledQuestion>, CorpusError> {
    read_corpus(BufReader::new(File::open(path)?))
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<LabeledQuestion>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let qtype = raw.qtype.parse().map_err(|_| CorpusError::UnknownLabel {
            line: line_no,
            kind: "question type",
            label: raw.qtype.clone(),
        })?;
        let mut spans = Vec::with_capacity(raw.entities.len());
        for s in raw.entities {
            let etype = s.etype.parse().map_err(|_| CorpusError::UnknownLabel {
                line: line_no,
                kind: "entity type",
                label: s.etype.clone(),
            })?;
            spans.push((s.start, s.end, etype));
        }
        let id = raw.id.unwrap_or_else(|| format!("line-{line_no}"));
        let q = LabeledQuestion::new(id, raw.text, qtype, spans).map_err(|e| match e {
            CorpusError::InvalidRecord { id, message } => CorpusError::InvalidRecord {
                id,
                message: format!("{message} (line {line_no})"),
            },
            other => other,
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn save_corpus(path: impl AsRef<Path>, data: &[LabeledQuestion]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn write_corpus(mut w: impl Write, data: &[LabeledQuestion]) -> Result<(), CorpusError> {
    for q in data {
        let raw = RawRecord {
            id: Some(q.id.clone()),
            text: q.text.clone(),
            qtype: q.qtype.to_string(),
            entities: q
                .entities
                .iter()
                .map(|e| RawSpan {
                    start: e.start,
                    end: e.end,
                    etype: e.etype.to_string(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &raw).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One of the nine BIO tags. The discriminant is the tag index used by the
/// sequence models; `O` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    O,
    Begin(EntityType),
    Inside(EntityType),
}

impl Tag {
    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::Begin(t) => 1 + 2 * t.index(),
            Tag::Inside(t) => 2 + 2 * t.index(),
        }
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        match i {
            0 => Some(Tag::O),
            1..=8 => {
                let t = EntityType::ALL[(i - 1) / 2];
                Some(if i % 2 == 1 {
                    Tag::Begin(t)
                } else {
                    Tag::Inside(t)
                })
            }
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = Tag> {
        (0..Self::COUNT).filter_map(Tag::from_index)
    }

    pub fn entity_type(self) -> Option<EntityType> {
        match self {
            Tag::O => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let err = || LabelError(s.to_string());
        let (prefix, ty) = s.split_once('-').ok_or_else(err)?;
        let ty: EntityType = ty.parse().map_err(|_| err())?;
        match prefix {
            "B" => Ok(Tag::Begin(ty)),
            "I" => Ok(Tag::Inside(ty)),
            _ => Err(err()),
        }
    }
}

/// True when no `I-t` follows `O`, the sequence start, or a tag of another type.
pub fn is_valid_bio(tags: &[Tag]) -> bool {
    let mut prev = Tag::O;
    for &tag in tags {
        if let Tag::Inside(t) = tag {
            if prev.entity_type() != Some(t) {
                return false;
            }
        }
        prev = tag;
    }
    true
}

/// Rewrites every `I-t` without a valid predecessor as `B-t`.
pub fn repair_bio(tags: &[Tag]) -> Vec<Tag> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev = Tag::O;
    for &tag in tags {
        let fixed = match tag {
            Tag::Inside(t) if prev.entity_type() != Some(t) => Tag::Begin(t),
            other => other,
        };
        out.push(fixed);
        prev = fixed;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagSequence {
    pub tokens: Vec<Token>,
    pub tags: Vec<Tag>,
}

impl TagSequence {
    /// # Panics
    /// If the lengths differ.
    pub fn new(tokens: Vec<Token>, tags: Vec<Tag>) -> Self {
        assert_eq!(tokens.len(), tags.len(), "one tag per token");
        TagSequence { tokens, tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Emitted by [`to_bio`] when a span boundary falls inside a token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentWarning {
    pub question_id: String,
    pub span: (usize, usize),
    pub aligned: Option<(usize, usize)>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BioEncoding {
    pub sequence: TagSequence,
    pub warnings: Vec<AlignmentWarning>,
}

/// Encodes `q` with the built-in tokenizer.
pub fn to_bio(q: &LabeledQuestion) -> BioEncoding {
    to_bio_with(q, tokenize(&q.text))
}

/// Encodes `q` over pre-computed tokens of `q.text`. A span whose boundary
/// splits a token is widened to the enclosing token boundaries; a token
/// claimed by two spans stays with the first.
pub fn to_bio_with(q: &LabeledQuestion, tokens: Vec<Token>) -> BioEncoding {
    let mut tags = vec![Tag::O; tokens.len()];
    let mut warnings = Vec::new();
    for span in &q.entities {
        let covered: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start < span.end && t.end > span.start)
            .map(|(i, _)| i)
            .collect();
        let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
            warnings.push(AlignmentWarning {
                question_id: q.id.clone(),
                span: (span.start, span.end),
                aligned: None,
                message: "span covers no token; dropped".into(),
            });
            continue;
        };
        let aligned = (tokens[first].start, tokens[last].end);
        if aligned != (span.start, span.end) {
            warnings.push(AlignmentWarning {
                question_id: q.id.clone(),
                span: (span.start, span.end),
                aligned: Some(aligned),
                message: "span boundary inside a token; expanded to token boundaries".into(),
            });
        }
        let mut begun = false;
        for i in covered {
            if tags[i] != Tag::O {
                warnings.push(AlignmentWarning {
                    question_id: q.id.clone(),
                    span: (span.start, span.end),
                    aligned: Some(aligned),
                    message: format!("token {i} already tagged by an earlier span"),
                });
                continue;
            }
            tags[i] = if begun {
                Tag::Inside(span.etype)
            } else {
                Tag::Begin(span.etype)
            };
            begun = true;
        }
    }
    for w in &warnings {
        log::warn!("{}: span {:?}: {}", w.question_id, w.span, w.message);
    }
    BioEncoding {
        sequence: TagSequence::new(tokens, tags),
        warnings,
    }
}

/// Decodes maximal B/I runs into spans after applying [`repair_bio`].
pub fn from_bio(seq: &TagSequence, original_text: &str) -> Vec<EntitySpan> {
    let tags = repair_bio(&seq.tags);
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize, EntityType)> = None;
    let close = |open: &mut Option<(usize, usize, EntityType)>, spans: &mut Vec<EntitySpan>| {
        if let Some((s, e, t)) = open.take() {
            spans.push(EntitySpan::from_text(original_text, s, e, t));
        }
    };
    for (tok, tag) in seq.tokens.iter().zip(tags) {
        match tag {
            Tag::O => close(&mut open, &mut spans),
            Tag::Begin(t) => {
                close(&mut open, &mut spans);
                open = Some((tok.start, tok.end, t));
            }
            Tag::Inside(_) => {
                if let Some(o) = open.as_mut() {
                    o.1 = tok.end;
                }
            }
        }
    }
    close(&mut open, &mut spans);
    spans
}

/// Stratified k-fold split of `data` by question type.
pub fn stratified_folds(
    data: &[LabeledQuestion],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, CorpusError> {
    let labels: Vec<QuestionType> = data.iter().map(|q| q.qtype).collect();
    stratified_folds_by(&labels, k, seed)
}

/// Each class is shuffled and dealt round-robin, continuing the fold cursor
/// across classes so that fold sizes also differ by at most one.
/// Every fold is returned sorted.
pub fn stratified_folds_by<L: Ord + Clone>(
    labels: &[L],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidFoldCount(k));
    }
    if k > labels.len() {
        return Err(CorpusError::TooFewSamples {
            samples: labels.len(),
            folds: k,
        });
    }
    let mut by_class: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[cursor % k].push(i);
            cursor += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Class sizes of the original annotated corpus, used as the
/// default class proportions for synthetic corpora.
pub const REFERENCE_CLASS_COUNTS: [(QuestionType, usize); 8] = [
    (QuestionType::Availability, 147),
    (QuestionType::AdverseEffects, 133),
    (QuestionType::Background, 125),
    (QuestionType::Effectiveness, 318),
    (QuestionType::Indication, 188),
    (QuestionType::Interaction, 237),
    (QuestionType::Safety, 108),
    (QuestionType::Usage, 253),
];

/// Templates use `{DS}`, `{DIS}`, `{MED}` and `{MISC}` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    pub templates: BTreeMap<QuestionType, Vec<String>>,
    pub gazetteers: BTreeMap<EntityType, Vec<String>>,
    pub class_weights: BTreeMap<QuestionType, f64>,
    /// Probability that a slot filler is lowercased.
    pub lowercase_entity_prob: f64,
    /// Probability that the whole question is lowercased.
    pub lowercase_question_prob: f64,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        use QuestionType::*;
        let mut templates = BTreeMap::new();
        templates.insert(
            Interaction,
            strings(&[
                "Does anyone know if you can take {DS} while taking {MED}?",
                "Can I take {DS} with {MED}?",
                "Is there any interaction between {DS} and {MED}?",
                "Does {DS} interact with {MED}?",
                "Will {DS} interfere with my {MED}?",
                "Is it ok to mix {DS} and {MED}?",
                "What drugs interact with {DS}?",
                "Are there drug interactions with {DS}?",
            ]),
        );
        templates.insert(
            Usage,
            strings(&[
                "What is the appropriate dosage of {DS} for {DIS} condition?",
                "How much {DS} should I take per day?",
                "How do I take {DS} for {DIS}?",
                "What is the recommended dose of {DS}?",
                "When is the best time of day to take {DS}?",
                "How many {DS} capsules should I take?",
                "How should {DS} be used?",
            ]),
        );
        templates.insert(
            Effectiveness,
            strings(&[
                "Does {DS} really work?",
                "are there any proven benefits to taking {DS}?",
                "Does {DS} actually help with {DIS}?",
                "Has {DS} been proven to work for {DIS}?",
                "Is {DS} effective against {DIS}?",
                "Will {DS} cure my {DIS}?",
                "Is there evidence that {DS} works?",
            ]),
        );
        templates.insert(
            AdverseEffects,
            strings(&[
                "Does {DS} cause {DIS}?",
                "are there any dangerous side effects that anyone has experienced with the supplement {DS}?",
                "What are the side effects of {DS}?",
                "Can {DS} give you {DIS}?",
                "Has anyone had a bad reaction to {DS}?",
                "I got {DIS} after taking {DS}, is that a side effect?",
                "What adverse reactions does {DS} have?",
            ]),
        );
        templates.insert(
            Indication,
            strings(&[
                "What are the benefits of using {DS}?",
                "What is {DS} good for?",
                "What conditions can {DS} treat?",
                "What is {DS} used for?",
                "Which supplement is recommended for {DIS}?",
                "What can I take {DS} for?",
                "What health problems does {DS} help?",
            ]),
        );
        templates.insert(
            Background,
            strings(&[
                "What exactly is {DS}?",
                "What is {DS} made from?",
                "Where does {DS} come from?",
                "Can you tell me about {DS}?",
                "What is {DS} and how is it made?",
                "I want to know more about {DS}.",
                "What kind of plant is {DS}?",
            ]),
        );
        templates.insert(
            Safety,
            strings(&[
                "Is {DS} safe during pregnancy?",
                "is it safe to take {DS}?",
                "Is {DS} safe for {MISC}?",
                "Is it dangerous to take {DS} every day?",
                "Can {MISC} take {DS} safely?",
                "Is long term use of {DS} safe?",
                "Are there any safety concerns with {DS}?",
            ]),
        );
        templates.insert(
            Availability,
            strings(&[
                "Where can I buy {DS} pills?",
                "Where can I find {DS} in stores?",
                "Which brand of {DS} should I buy?",
                "Is {DS} sold over the counter?",
                "Where to purchase {DS} online?",
                "Do pharmacies carry {DS}?",
                "Can I get {DS} without a prescription?",
            ]),
        );
        let mut gazetteers = BTreeMap::new();
        gazetteers.insert(
            EntityType::DS,
            strings(&[
                "Niacin",
                "kratom",
                "ginseng",
                "Melatonin",
                "shark cartilage",
                "Blessed Thistle",
                "milk thistle",
                "valerian root",
                "Selenium",
                "acai berry",
                "ephedrine",
                "L-glutamine",
                "St. John's Wort",
                "fish oil",
                "echinacea",
                "ginkgo biloba",
                "garlic",
                "turmeric",
                "zinc",
                "vitamin D",
                "vitamin C",
                "magnesium",
                "glucosamine",
                "black cohosh",
                "green tea extract",
                "coenzyme Q10",
                "evening primrose oil",
                "saw palmetto",
                "chamomile",
                "ashwagandha",
            ]),
        );
        gazetteers.insert(
            EntityType::MED,
            strings(&[
                "levothyroxine",
                "warfarin",
                "aspirin",
                "metformin",
                "lisinopril",
                "sertraline",
                "ibuprofen",
                "prednisone",
                "birth control pills",
                "insulin",
                "Prozac",
                "Lipitor",
                "atorvastatin",
                "omeprazole",
            ]),
        );
        gazetteers.insert(
            EntityType::DIS,
            strings(&[
                "IBS",
                "headache",
                "arthritis",
                "insomnia",
                "depression",
                "diabetes",
                "high blood pressure",
                "migraines",
                "anxiety",
                "acne",
                "hair loss",
                "osteoarthritis",
                "Degenerative Polyarthritis",
                "heart disease",
                "kidney stones",
                "nausea",
            ]),
        );
        gazetteers.insert(
            EntityType::MISC,
            strings(&[
                "children",
                "teenagers",
                "elderly people",
                "athletes",
                "nursing mothers",
                "dogs",
            ]),
        );
        let class_weights = REFERENCE_CLASS_COUNTS
            .iter()
            .map(|&(q, n)| (q, n as f64))
            .collect();
        SynthConfig {
            size: 500,
            templates,
            gazetteers,
            class_weights,
            lowercase_entity_prob: 0.3,
            lowercase_question_prob: 0.15,
        }
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(EntityType),
}

fn parse_template(template: &str) -> Result<Vec<Piece<'_>>, CorpusError> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        if open > 0 {
            pieces.push(Piece::Literal(&rest[..open]));
        }
        let name = &rest[open + 1..open + close];
        let etype = name.parse().map_err(|_| CorpusError::UnknownSlot {
            template: template.to_string(),
            slot: name.to_string(),
        })?;
        pieces.push(Piece::Slot(etype));
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal(rest));
    }
    Ok(pieces)
}

/// Largest-remainder apportionment of `size` over the weighted classes;
/// remainder ties go to the earlier class.
fn apportion(size: usize, weights: &[(QuestionType, f64)]) -> Vec<(QuestionType, usize)> {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let quotas: Vec<f64> = weights.iter().map(|w| size as f64 * w.1 / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = size - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    weights.iter().map(|w| w.0).zip(counts).collect()
}

/// Generates `config.size` questions from the per-type templates. Classes
/// without templates receive no samples; the rest are apportioned by
/// `class_weights`.
pub fn generate_synthetic_corpus(
    config: &SynthConfig,
    seed: u64,
) -> Result<Vec<LabeledQuestion>, CorpusError> {
    if !(0.0..=1.0).contains(&config.lowercase_entity_prob)
        || !(0.0..=1.0).contains(&config.lowercase_question_prob)
    {
        return Err(CorpusError::Config(
            "probabilities must lie in [0, 1]".into(),
        ));
    }
    let mut parsed: BTreeMap<QuestionType, Vec<Vec<Piece<'_>>>> = BTreeMap::new();
    for (&qtype, templates) in &config.templates {
        for t in templates {
            let pieces = parse_template(t)?;
            for p in &pieces {
                if let Piece::Slot(e) = p {
                    if config.gazetteers.get(e).is_none_or(Vec::is_empty) {
                        return Err(CorpusError::EmptyGazetteer(*e));
                    }
                }
            }
            parsed.entry(qtype).or_default().push(pieces);
        }
    }
    let weights: Vec<(QuestionType, f64)> = QuestionType::ALL
        .into_iter()
        .filter(|q| parsed.contains_key(q))
        .map(|q| {
            (
                q,
                config
                    .class_weights
                    .get(&q)
                    .copied()
                    .unwrap_or(0.0)
                    .max(0.0),
            )
        })
        .collect();
    if config.size > 0 && weights.iter().all(|w| w.1 == 0.0) {
        return Err(CorpusError::Config(
            "no question type has both templates and positive weight".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drafts = Vec::with_capacity(config.size);
    for (qtype, count) in apportion(config.size, &weights) {
        let templates = &parsed[&qtype];
        for _ in 0..count {
            let pieces = &templates[rng.gen_range(0..templates.len())];
            let lower_all = rng.gen_bool(config.lowercase_question_prob);
            let mut text = String::new();
            let mut len = 0;
            let mut spans = Vec::new();
            for p in pieces {
                let mut chunk = match p {
                    Piece::Literal(s) => s.to_string(),
                    Piece::Slot(e) => {
                        let gaz = &config.gazetteers[e];
                        let filler = gaz[rng.gen_range(0..gaz.len())].clone();
                        if rng.gen_bool(config.lowercase_entity_prob) {
                            filler.to_lowercase()
                        } else {
                            filler
                        }
                    }
                };
                if lower_all {
                    chunk = chunk.to_lowercase();
                }
                let n = chunk.chars().count();
                if let Piece::Slot(e) = p {
                    spans.push((len, len + n, *e));
                }
                text.push_str(&chunk);
                len += n;
            }
            drafts.push((text, qtype, spans));
        }
    }
    drafts.shuffle(&mut rng);
    drafts
        .into_iter()
        .enumerate()
        .map(|(i, (text, qtype, spans))| {
            LabeledQuestion::new(format!("syn-{:05}", i + 1), text, qtype, spans)
        })
        .collect()
}
