use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lattice::{Lattice, NUM_TAGS};
use super::{sequence_tags, NerError, SequenceTagger};
use crate::corpus::{to_bio, LabeledQuestion, Tag};
use crate::textproc::Token;

/// First-order HMM over lowercased tokens, stored as log-probabilities.
///
/// Start and transition rows use add-one smoothing over the 9 tags;
/// emission rows use add-one smoothing over the training vocabulary. Words
/// outside the vocabulary get the same emission score under every tag, so
/// decoding falls back on the transition model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModel {
    pub vocab: BTreeMap<String, usize>,
    pub start: Vec<f64>,
    /// `[from][to]`.
    pub transitions: Vec<f64>,
    /// `[word][tag]`: log P(word | tag).
    pub emissions: Vec<f64>,
}

impl HmmModel {
    pub fn emission(&self, word: &str, tag: usize) -> Option<f64> {
        self.vocab
            .get(word)
            .map(|&w| self.emissions[w * NUM_TAGS + tag])
    }

    pub fn lattice(&self, tokens: &[Token]) -> Lattice {
        let emissions = tokens
            .iter()
            .map(|t| match self.vocab.get(&t.lower) {
                Some(&w) => self.emissions[w * NUM_TAGS..(w + 1) * NUM_TAGS]
                    .try_into()
                    .expect("row of 9"),
                None => [0.0; NUM_TAGS],
            })
            .collect();
        Lattice {
            emissions,
            transitions: std::array::from_fn(|i| {
                std::array::from_fn(|j| self.transitions[i * NUM_TAGS + j])
            }),
            start: self
                .start
                .as_slice()
                .try_into()
                .expect("start has 9 entries"),
            end: [0.0; NUM_TAGS],
        }
    }
}

impl SequenceTagger for HmmModel {
    fn tag_tokens(&self, tokens: &[Token]) -> Vec<Tag> {
        if tokens.is_empty() {
            return Vec::new();
        }
        sequence_tags(&self.lattice(tokens).viterbi().0)
    }
}

/// Maximum-likelihood counts with add-one smoothing.
pub fn train_hmm(data: &[LabeledQuestion]) -> Result<HmmModel, NerError> {
    let sequences: Vec<_> = data
        .iter()
        .map(|q| to_bio(q).sequence)
        .filter(|s| !s.is_empty())
        .collect();
    if sequences.is_empty() {
        return Err(NerError::EmptyData);
    }
    let mut vocab = BTreeMap::new();
    for s in &sequences {
        for t in &s.tokens {
            let next = vocab.len();
            vocab.entry(t.lower.clone()).or_insert(next);
        }
    }
    let v = vocab.len();
    let mut start = [0.0; NUM_TAGS];
    let mut trans = [[0.0; NUM_TAGS]; NUM_TAGS];
    let mut emit = vec![0.0; v * NUM_TAGS];
    let mut tag_totals = [0.0; NUM_TAGS];
    for s in &sequences {
        start[s.tags[0].index()] += 1.0;
        for (i, (tok, tag)) in s.tokens.iter().zip(&s.tags).enumerate() {
            let y = tag.index();
            emit[vocab[&tok.lower] * NUM_TAGS + y] += 1.0;
            tag_totals[y] += 1.0;
            if i > 0 {
                trans[s.tags[i - 1].index()][y] += 1.0;
            }
        }
    }
    let n = sequences.len() as f64;
    let start = start
        .iter()
        .map(|c| ((c + 1.0) / (n + NUM_TAGS as f64)).ln())
        .collect();
    let mut transitions = Vec::with_capacity(NUM_TAGS * NUM_TAGS);
    for row in &trans {
        let total: f64 = row.iter().sum();
        transitions.extend(
            row.iter()
                .map(|c| ((c + 1.0) / (total + NUM_TAGS as f64)).ln()),
        );
    }
    for (k, e) in emit.iter_mut().enumerate() {
        *e = ((*e + 1.0) / (tag_totals[k % NUM_TAGS] + v as f64)).ln();
    }
    Ok(HmmModel {
        vocab,
        start,
        transitions,
        emissions: emit,
    })
}
