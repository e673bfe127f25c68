//! Entity tagging with a linear-chain CRF, plus an HMM baseline.
//!
//! Both models decode with the same Viterbi over [`Lattice`]; their output
//! is BIO-repaired and turned into character spans by
//! [`from_bio`](crate::corpus::from_bio).

mod crf;
mod hmm;
mod lattice;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crf::{
    crf_examples, crf_gradient, fit, log_partition, log_score, train_crf, train_crf_with_log,
    CrfExample, CrfModel, CrfTrainConfig, CrfWeights, SequenceFeatures,
};
pub use hmm::{train_hmm, HmmModel};
pub use lattice::{Lattice, Marginals, TagRow, NUM_TAGS};

use crate::corpus::{from_bio, repair_bio, EntitySpan, Tag, TagSequence};
use crate::persist::{self, PersistError};
use crate::textproc::{tokenize, Token};

#[derive(Debug, Error)]
pub enum NerError {
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

fn sequence_tags(path: &[usize]) -> Vec<Tag> {
    path.iter()
        .map(|&i| Tag::from_index(i).expect("tag index below 9"))
        .collect()
}

/// Assigns one BIO tag per token.
pub trait SequenceTagger {
    fn tag_tokens(&self, tokens: &[Token]) -> Vec<Tag>;
}

/// Tokenizes and tags `text`; the tags are BIO-repaired.
pub fn tag_text(model: &impl SequenceTagger, text: &str) -> TagSequence {
    let tokens = tokenize(text);
    let tags = repair_bio(&model.tag_tokens(&tokens));
    TagSequence::new(tokens, tags)
}

pub fn predict_entities(model: &impl SequenceTagger, text: &str) -> Vec<EntitySpan> {
    from_bio(&tag_text(model, text), text)
}

pub const NER_FORMAT: &str = "dsqa-ner";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NerModel {
    Crf(CrfModel),
    Hmm(HmmModel),
}

impl NerModel {
    pub fn kind(&self) -> &'static str {
        match self {
            NerModel::Crf(_) => "crf",
            NerModel::Hmm(_) => "hmm",
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NerError> {
        Ok(persist::save(path, NER_FORMAT, self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NerError> {
        Ok(persist::load(path, NER_FORMAT)?)
    }

    pub fn to_json(&self) -> Result<String, NerError> {
        Ok(persist::to_json(NER_FORMAT, self)?)
    }

    pub fn from_json(json: &str) -> Result<Self, NerError> {
        Ok(persist::from_json(NER_FORMAT, json)?)
    }
}

impl SequenceTagger for NerModel {
    fn tag_tokens(&self, tokens: &[Token]) -> Vec<Tag> {
        match self {
            NerModel::Crf(m) => m.tag_tokens(tokens),
            NerModel::Hmm(m) => m.tag_tokens(tokens),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityType;
    use crate::textproc::FeatureInterner;

    #[test]
    fn zero_model_tags_everything_outside() {
        let m = CrfModel::zeros(FeatureInterner::new());
        assert!(predict_entities(&m, "Is kratom safe?").is_empty());
        assert!(predict_entities(&m, "").is_empty());
    }

    #[test]
    fn constructed_weight_marks_kratom() {
        let mut features = FeatureInterner::new();
        let id = features.intern("lower=kratom");
        let mut m = CrfModel::zeros(features);
        m.set_emission_weight(id, Tag::Begin(EntityType::DS).index(), 10.0);
        let spans = predict_entities(&m, "Is kratom safe");
        assert_eq!(spans.len(), 1);
        assert_eq!(
            (spans[0].start, spans[0].end, spans[0].etype),
            (3, 9, EntityType::DS)
        );
        assert_eq!(spans[0].surface, "kratom");
    }

    #[test]
    fn inside_without_begin_is_repaired() {
        let mut features = FeatureInterner::new();
        let id = features.intern("lower=kratom");
        let mut m = CrfModel::zeros(features);
        m.set_emission_weight(id, Tag::Inside(EntityType::DS).index(), 10.0);
        let seq = tag_text(&m, "Is kratom safe");
        assert_eq!(seq.tags[1], Tag::Begin(EntityType::DS));
    }

    #[test]
    fn persisted_model_round_trips() {
        let mut features = FeatureInterner::new();
        features.intern("bias");
        let mut m = CrfModel::zeros(features);
        m.weights.transitions[10] = 0.1 + 0.2;
        let model = NerModel::Crf(m);
        let back = NerModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.kind(), "crf");
    }
}
