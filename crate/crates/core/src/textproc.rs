//! Tokenization, CRF feature templates and word embeddings.
//!
//! All offsets in this crate are Unicode scalar-value (char) indices, never
//! byte offsets.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A token with char offsets into its source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub lower: String,
}

impl Token {
    fn new(chars: &[char], start: usize) -> Self {
        let surface: String = chars.iter().collect();
        let lower = surface.to_lowercase();
        Token {
            surface,
            start,
            end: start + chars.len(),
            lower,
        }
    }
}

/// Punctuation test used by the tokenizer and the name normalizer.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'..='\u{201F}'
                | '\u{2010}'..='\u{2015}'
                | '\u{2026}'
                | '\u{00A1}'
                | '\u{00BF}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{00B7}'
                | '\u{3001}'
                | '\u{3002}'
                | '\u{FF01}'
                | '\u{FF08}'
                | '\u{FF09}'
                | '\u{FF0C}'
                | '\u{FF1A}'
                | '\u{FF1B}'
                | '\u{FF1F}'
        )
}

/// Splits on Unicode whitespace, then peels leading and trailing
/// punctuation off each chunk as one-char tokens. Internal punctuation
/// (`L-glutamine`, `John's`) stays inside the token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars[chunk_start..i], chunk_start, &mut tokens);
    }
    tokens
}

fn split_chunk(chunk: &[char], offset: usize, out: &mut Vec<Token>) {
    let mut lo = 0;
    let mut hi = chunk.len();
    while lo < hi && is_punctuation(chunk[lo]) {
        out.push(Token::new(&chunk[lo..lo + 1], offset + lo));
        lo += 1;
    }
    let mut trailing = Vec::new();
    while hi > lo && is_punctuation(chunk[hi - 1]) {
        trailing.push(Token::new(&chunk[hi - 1..hi], offset + hi - 1));
        hi -= 1;
    }
    if lo < hi {
        out.push(Token::new(&chunk[lo..hi], offset + lo));
    }
    out.extend(trailing.into_iter().rev());
}

/// Returns `text[start..end]` in char offsets, clamped to the text length.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars()
        .skip(start)
        .take(end.saturating_sub(start))
        .collect()
}

/// Coarse universal part-of-speech tags produced by [`coarse_pos`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Num,
    Conj,
    Prt,
    Punct,
    X,
}

impl Pos {
    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
            Pos::Pron => "PRON",
            Pos::Det => "DET",
            Pos::Adp => "ADP",
            Pos::Num => "NUM",
            Pos::Conj => "CONJ",
            Pos::Prt => "PRT",
            Pos::Punct => "PUNCT",
            Pos::X => "X",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const PRONOUNS: &[&str] = &[
    "i",
    "you",
    "he",
    "she",
    "it",
    "we",
    "they",
    "me",
    "him",
    "her",
    "us",
    "them",
    "my",
    "your",
    "his",
    "its",
    "our",
    "their",
    "mine",
    "yours",
    "anyone",
    "anybody",
    "anything",
    "someone",
    "somebody",
    "something",
    "everyone",
    "nobody",
    "nothing",
    "what",
    "who",
    "whom",
    "whose",
    "which",
    "myself",
    "yourself",
    "itself",
    "themselves",
];
const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "any", "some", "every", "each", "all",
    "no", "another", "either", "neither", "much", "many", "more", "most", "few", "several",
];
const ADPOSITIONS: &[&str] = &[
    "of", "in", "on", "at", "for", "with", "from", "by", "about", "during", "after", "before",
    "into", "without", "over", "under", "between", "through", "like", "against", "per", "than",
    "since", "within", "across", "along", "among", "around", "via",
];
const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "if", "while", "because", "so", "nor", "whether", "although", "though",
];
const PARTICLES: &[&str] = &["to", "not", "n't", "up", "off", "out", "'s"];
const VERBS: &[&str] = &[
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "being",
    "am",
    "do",
    "does",
    "did",
    "done",
    "have",
    "has",
    "had",
    "can",
    "could",
    "will",
    "would",
    "shall",
    "should",
    "may",
    "might",
    "must",
    "take",
    "takes",
    "took",
    "work",
    "works",
    "cause",
    "causes",
    "help",
    "helps",
    "buy",
    "use",
    "know",
    "get",
    "got",
    "find",
    "make",
    "made",
    "give",
    "go",
    "want",
    "need",
    "tell",
    "come",
    "treat",
    "cure",
    "mix",
    "sell",
    "sold",
    "carry",
    "interact",
    "interfere",
    "purchase",
    "say",
    "think",
    "try",
    "stop",
    "start",
    "feel",
    "eat",
    "drink",
    "recommend",
    "prevent",
];
const ADVERBS: &[&str] = &[
    "really", "exactly", "very", "also", "too", "just", "how", "when", "where", "why", "often",
    "ever", "never", "there", "here", "now", "then", "actually", "still", "already", "always",
    "again", "well", "safely", "daily", "online",
];
const ADJECTIVES: &[&str] = &[
    "safe",
    "good",
    "bad",
    "best",
    "better",
    "effective",
    "dangerous",
    "proven",
    "appropriate",
    "healthy",
    "natural",
    "long",
    "short",
    "high",
    "low",
    "new",
    "old",
    "recommended",
    "harmful",
    "okay",
    "ok",
    "fine",
    "real",
    "true",
    "other",
    "same",
    "different",
    "pure",
    "common",
];
const NUMBER_WORDS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "hundred",
    "thousand", "once", "twice",
];

/// Lexicon plus suffix-rule coarse tagger. Context-free: the tag depends on
/// the token alone.
pub fn coarse_pos(token: &Token) -> Pos {
    let w = token.lower.as_str();
    if w.chars().all(is_punctuation) {
        return Pos::Punct;
    }
    if w.chars()
        .all(|c| c.is_ascii_digit() || c == '.' || c == ',')
    {
        return Pos::Num;
    }
    let lists: [(&[&str], Pos); 9] = [
        (PRONOUNS, Pos::Pron),
        (DETERMINERS, Pos::Det),
        (ADPOSITIONS, Pos::Adp),
        (CONJUNCTIONS, Pos::Conj),
        (PARTICLES, Pos::Prt),
        (VERBS, Pos::Verb),
        (ADVERBS, Pos::Adv),
        (ADJECTIVES, Pos::Adj),
        (NUMBER_WORDS, Pos::Num),
    ];
    for (list, pos) in lists {
        if list.contains(&w) {
            return pos;
        }
    }
    if !w.chars().any(char::is_alphabetic) {
        return Pos::X;
    }
    if w.len() > 4 && w.ends_with("ly") {
        Pos::Adv
    } else if w.len() > 4 && (w.ends_with("ing") || w.ends_with("ed")) {
        Pos::Verb
    } else if w.len() > 5
        && ["ous", "ful", "ive", "able", "ible", "ical", "less"]
            .iter()
            .any(|s| w.ends_with(s))
    {
        Pos::Adj
    } else {
        Pos::Noun
    }
}

/// Orthographic shape class of a token.
pub fn word_shape(surface: &str) -> &'static str {
    let letters: Vec<char> = surface.chars().filter(|c| c.is_alphabetic()).collect();
    if surface.chars().all(is_punctuation) {
        "punct"
    } else if surface.chars().all(|c| c.is_numeric()) {
        "digit"
    } else if letters.len() == surface.chars().count() {
        if letters.iter().all(|c| c.is_lowercase()) {
            "lower"
        } else if letters.iter().all(|c| c.is_uppercase()) {
            "upper"
        } else if letters[0].is_uppercase() && letters[1..].iter().all(|c| c.is_lowercase()) {
            "capitalized"
        } else {
            "mixed"
        }
    } else {
        "mixed"
    }
}

/// Named binary/real features for one token position, before interning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub entries: Vec<(String, f64)>,
}

impl FeatureVector {
    fn push(&mut self, name: String) {
        self.entries.push((name, 1.0));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn suffix(w: &str, n: usize) -> String {
    let chars: Vec<char> = w.chars().collect();
    chars[chars.len().saturating_sub(n)..].iter().collect()
}

fn prefix(w: &str, n: usize) -> String {
    w.chars().take(n).collect()
}

fn token_features(fv: &mut FeatureVector, tag: &str, token: &Token) {
    fv.push(format!("{tag}lower={}", token.lower));
    fv.push(format!("{tag}suffix2={}", suffix(&token.lower, 2)));
    fv.push(format!("{tag}suffix3={}", suffix(&token.lower, 3)));
    fv.push(format!("{tag}prefix3={}", prefix(&token.lower, 3)));
    fv.push(format!("{tag}shape={}", word_shape(&token.surface)));
    fv.push(format!("{tag}pos={}", coarse_pos(token)));
}

/// CRF feature template at `position`: lowercased form, 2/3-char suffixes,
/// 3-char prefix, shape and coarse POS for the token and its ±1 neighbours,
/// plus sentence-boundary markers.
///
/// # Panics
/// If `position` is out of range.
pub fn crf_features(tokens: &[Token], position: usize) -> FeatureVector {
    assert!(
        position < tokens.len(),
        "feature position {position} out of range"
    );
    let mut fv = FeatureVector::default();
    fv.push("bias".to_string());
    token_features(&mut fv, "", &tokens[position]);
    if position == 0 {
        fv.push("BOS".to_string());
    } else {
        token_features(&mut fv, "prev_", &tokens[position - 1]);
        fv.push(format!(
            "prev_pos|pos={}|{}",
            coarse_pos(&tokens[position - 1]),
            coarse_pos(&tokens[position])
        ));
    }
    if position + 1 == tokens.len() {
        fv.push("EOS".to_string());
    } else {
        token_features(&mut fv, "next_", &tokens[position + 1]);
    }
    fv
}

/// String-to-id map for feature names. Ids are dense and assigned in first-seen
/// order, so the mapping is a pure function of the interning sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureInterner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl From<Vec<String>> for FeatureInterner {
    fn from(names: Vec<String>) -> Self {
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        FeatureInterner { names, ids }
    }
}

impl From<FeatureInterner> for Vec<String> {
    fn from(interner: FeatureInterner) -> Self {
        interner.names
    }
}

impl FeatureInterner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Maps named features to ids, dropping names never interned.
    pub fn encode(&self, fv: &FeatureVector) -> Vec<(u32, f64)> {
        fv.entries
            .iter()
            .filter_map(|(n, v)| self.get(n).map(|id| (id, *v)))
            .collect()
    }

    /// Like [`encode`](Self::encode) but interns unseen names.
    pub fn encode_growing(&mut self, fv: &FeatureVector) -> Vec<(u32, f64)> {
        fv.entries
            .iter()
            .map(|(n, v)| (self.intern(n), *v))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("failed to read embeddings: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding file is empty")]
    Empty,
    #[error("line {line} ({token:?}): expected {expected} dimensions, found {found}")]
    Dimension {
        line: usize,
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: invalid number {value:?}")]
    Number { line: usize, value: String },
    #[error("embedding dimension must be positive")]
    ZeroDimension,
}

/// Dense word vectors with one extra out-of-vocabulary row stored last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "EmbeddingRepr", into = "EmbeddingRepr")]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    matrix: Vec<f64>,
    pub trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRepr {
    tokens: Vec<String>,
    dim: usize,
    matrix: Vec<f64>,
    trainable: bool,
}

impl From<EmbeddingRepr> for EmbeddingTable {
    fn from(r: EmbeddingRepr) -> Self {
        let index = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        EmbeddingTable {
            tokens: r.tokens,
            index,
            dim: r.dim,
            matrix: r.matrix,
            trainable: r.trainable,
        }
    }
}

impl From<EmbeddingTable> for EmbeddingRepr {
    fn from(t: EmbeddingTable) -> Self {
        EmbeddingRepr {
            tokens: t.tokens,
            dim: t.dim,
            matrix: t.matrix,
            trainable: t.trainable,
        }
    }
}

impl EmbeddingTable {
    /// Number of vocabulary rows, excluding the OOV row.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row index of the OOV vector.
    pub fn oov_index(&self) -> usize {
        self.tokens.len()
    }

    /// Exact lookup, then lowercased; `None` when out of vocabulary.
    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))
            .copied()
    }

    /// Row index for a token, falling back to the OOV row.
    pub fn row_index(&self, token: &str) -> usize {
        self.index_of(token).unwrap_or(self.oov_index())
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.row(self.row_index(token))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Row-major `(len + 1) × dim` matrix; the last row is OOV.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut [f64] {
        &mut self.matrix
    }
}

/// Reads `token v1 ... vd` rows. Loaded tables get a zero OOV row.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbeddingError> {
    read_embeddings(BufReader::new(File::open(path)?))
}

pub fn read_embeddings(reader: impl BufRead) -> Result<EmbeddingTable, EmbeddingError> {
    let mut tokens = Vec::new();
    let mut index = HashMap::new();
    let mut matrix = Vec::new();
    let mut dim = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|v| {
                v.parse::<f64>().map_err(|_| EmbeddingError::Number {
                    line: i + 1,
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if dim == 0 {
            if values.is_empty() {
                return Err(EmbeddingError::ZeroDimension);
            }
            dim = values.len();
        } else if values.len() != dim {
            return Err(EmbeddingError::Dimension {
                line: i + 1,
                token: token.to_string(),
                expected: dim,
                found: values.len(),
            });
        }
        if index.contains_key(token) {
            log::warn!(
                "duplicate embedding row for {token:?} at line {}; keeping the first",
                i + 1
            );
            continue;
        }
        index.insert(token.to_string(), tokens.len());
        tokens.push(token.to_string());
        matrix.extend(values);
    }
    if tokens.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    matrix.extend(std::iter::repeat_n(0.0, dim));
    Ok(EmbeddingTable {
        tokens,
        index,
        dim,
        matrix,
        trainable: false,
    })
}

/// Seeded table with every row (OOV included) uniform in `[-0.5/d, 0.5/d]`.
/// Duplicate vocabulary entries are dropped, first occurrence wins.
pub fn random_embeddings<S: AsRef<str>>(
    vocab: &[S],
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable, EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::ZeroDimension);
    }
    let mut tokens = Vec::new();
    let mut index = HashMap::new();
    for t in vocab {
        let t = t.as_ref();
        if !index.contains_key(t) {
            index.insert(t.to_string(), tokens.len());
            tokens.push(t.to_string());
        }
    }
    let bound = 0.5 / dim as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = (0..(tokens.len() + 1) * dim)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Ok(EmbeddingTable {
        tokens,
        index,
        dim,
        matrix,
        trainable: true,
    })
}
