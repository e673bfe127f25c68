//! Question-type classification.
//!
//! Two model families share one training configuration: a hashed
//! bag-of-n-grams softmax regression ([`LinearModel`]) and a multi-width
//! 1-D convolutional network over word embeddings ([`ConvModel`]).

mod conv;
mod linear;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conv::{
    forward_conv, grad_conv, train_conv, train_conv_with_log, ConvGrad, ConvModel, FilterBank,
};
pub use linear::{
    linear_features, linear_gradient, train_linear, train_linear_with_log, LinearGrad, LinearModel,
};

use crate::corpus::{LabeledQuestion, QuestionType};
use crate::math::argmax;
use crate::optim::OptimizerKind;
use crate::persist::{self, PersistError};
use crate::textproc::EmbeddingError;

pub const NUM_CLASSES: usize = QuestionType::COUNT;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data contains a single question type ({0}); need at least two")]
    SingleClass(QuestionType),
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

/// Hyper-parameters for both classifier families. The linear model uses
/// only the optimizer-independent fields (`learning_rate`, `batch_size`,
/// `epochs`, `seed`, `hash_bits`) and always runs plain SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub widths: Vec<usize>,
    pub num_filters: usize,
    pub embedding_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub hash_bits: u32,
}

impl Default for TrainConfig {
    /// Full-size settings: widths {1,2,3,5,7}, 128 filters, 300-d embeddings.
    fn default() -> Self {
        TrainConfig {
            widths: vec![1, 2, 3, 5, 7],
            num_filters: 128,
            embedding_dim: 300,
            dropout: 0.1,
            learning_rate: 0.5,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            hash_bits: 18,
        }
    }
}

impl TrainConfig {
    /// Small settings for laptop-scale runs and tests.
    pub fn desk() -> Self {
        TrainConfig {
            num_filters: 8,
            embedding_dim: 16,
            ..Self::default()
        }
    }

    /// Desk settings for the linear model. Its features are L2-normalized,
    /// so it needs a much larger step than the convolutional model.
    pub fn desk_linear() -> Self {
        TrainConfig {
            learning_rate: 5.0,
            epochs: 40,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("filter widths must be non-empty and positive");
        }
        if self.num_filters == 0 {
            return bad("num_filters must be at least 1");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(1..=30).contains(&self.hash_bits) {
            return bad("hash_bits must lie in 1..=30");
        }
        Ok(())
    }
}

fn check_classes(data: &[LabeledQuestion]) -> Result<(), ClassifierError> {
    let first = data.first().ok_or(ClassifierError::EmptyData)?.qtype;
    if data.iter().all(|q| q.qtype == first) {
        return Err(ClassifierError::SingleClass(first));
    }
    Ok(())
}

/// Anything that maps question text to class log-probabilities.
pub trait QuestionClassifier {
    /// Log-probabilities indexed by [`QuestionType::index`].
    fn log_probs(&self, text: &str) -> [f64; NUM_CLASSES];

    /// Most probable type and its probability. Ties go to the type listed
    /// first in [`QuestionType::ALL`].
    fn predict_qtype(&self, text: &str) -> (QuestionType, f64) {
        let lp = self.log_probs(text);
        let best = argmax(&lp);
        (QuestionType::ALL[best], lp[best].exp().clamp(0.0, 1.0))
    }
}

pub fn predict_qtype(model: &impl QuestionClassifier, text: &str) -> (QuestionType, f64) {
    model.predict_qtype(text)
}

pub const CLASSIFIER_FORMAT: &str = "dsqa-classifier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierModel {
    Linear(LinearModel),
    Conv(ConvModel),
}

impl ClassifierModel {
    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierModel::Linear(_) => "linear",
            ClassifierModel::Conv(_) => "conv",
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        Ok(persist::save(path, CLASSIFIER_FORMAT, self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        Ok(persist::load(path, CLASSIFIER_FORMAT)?)
    }

    pub fn to_json(&self) -> Result<String, ClassifierError> {
        Ok(persist::to_json(CLASSIFIER_FORMAT, self)?)
    }

    pub fn from_json(json: &str) -> Result<Self, ClassifierError> {
        Ok(persist::from_json(CLASSIFIER_FORMAT, json)?)
    }
}

impl QuestionClassifier for ClassifierModel {
    fn log_probs(&self, text: &str) -> [f64; NUM_CLASSES] {
        match self {
            ClassifierModel::Linear(m) => m.log_probs(text),
            ClassifierModel::Conv(m) => m.log_probs(text),
        }
    }
}
