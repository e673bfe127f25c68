//! Small bundled knowledge base and synthetic-trained models for examples,
//! tests and demos.

use crate::classifier::{train_linear, ClassifierModel, TrainConfig};
use crate::corpus::{generate_synthetic_corpus, SynthConfig};
use crate::dialog::{Pipeline, PipelineConfig, TemplateSet};
use crate::kb::{read_rrf, KnowledgeIndex, KnowledgeStore};
use crate::ner::{train_crf, CrfTrainConfig, NerModel};

pub const CONSO: &str = include_str!("../fixtures/conso.rrf");
pub const REL: &str = include_str!("../fixtures/rel.rrf");
pub const SAT: &str = include_str!("../fixtures/sat.rrf");

pub fn store() -> KnowledgeStore {
    read_rrf(CONSO.as_bytes(), REL.as_bytes(), SAT.as_bytes()).expect("bundled fixture parses")
}

pub fn index() -> KnowledgeIndex {
    KnowledgeIndex::build(&store()).expect("bundled fixture is consistent")
}

/// Linear classifier and CRF tagger trained on a seeded synthetic corpus
/// of `size` questions with desk-scale settings.
pub fn synthetic_models(size: usize, seed: u64) -> (ClassifierModel, NerModel) {
    let config = SynthConfig {
        size,
        ..SynthConfig::default()
    };
    let corpus =
        generate_synthetic_corpus(&config, seed).expect("default synthetic config is valid");
    let classifier = train_linear(
        &corpus,
        &TrainConfig {
            seed,
            ..TrainConfig::desk_linear()
        },
    )
    .expect("synthetic corpus trains");
    let crf = train_crf(
        &corpus,
        &CrfTrainConfig {
            seed,
            ..CrfTrainConfig::default()
        },
    )
    .expect("synthetic corpus trains");
    (ClassifierModel::Linear(classifier), NerModel::Crf(crf))
}

/// Synthetic-trained models over the bundled knowledge base with default
/// templates and settings.
pub fn demo_pipeline(seed: u64) -> Pipeline {
    let (classifier, ner) = synthetic_models(500, seed);
    Pipeline::new(
        classifier,
        ner,
        index(),
        TemplateSet::default(),
        PipelineConfig::default(),
    )
    .expect("default pipeline config is valid")
}
