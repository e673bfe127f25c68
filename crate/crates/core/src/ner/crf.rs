use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lattice::{Lattice, NUM_TAGS};
use super::{sequence_tags, NerError, SequenceTagger};
use crate::corpus::{to_bio, LabeledQuestion, Tag};
use crate::optim::{Optimizer, OptimizerKind};
use crate::textproc::{crf_features, FeatureInterner, Token};

/// Active features per position as `(feature id, value)`.
pub type SequenceFeatures = Vec<Vec<(u32, f64)>>;

/// One training sequence: encoded features and gold tag indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfExample {
    pub features: SequenceFeatures,
    pub tags: Vec<usize>,
}

/// All CRF parameters as flat vectors. Also used as the gradient type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfWeights {
    /// `[feature][tag]`.
    pub emissions: Vec<f64>,
    /// `[from][to]`, 9×9.
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfWeights {
    pub fn zeros(num_features: usize) -> Self {
        CrfWeights {
            emissions: vec![0.0; num_features * NUM_TAGS],
            transitions: vec![0.0; NUM_TAGS * NUM_TAGS],
            start: vec![0.0; NUM_TAGS],
            end: vec![0.0; NUM_TAGS],
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        vec![&self.emissions, &self.transitions, &self.start, &self.end]
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.emissions,
            &mut self.transitions,
            &mut self.start,
            &mut self.end,
        ]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.emissions
            .iter()
            .chain(&self.transitions)
            .chain(&self.start)
            .chain(&self.end)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.emissions
            .iter_mut()
            .chain(&mut self.transitions)
            .chain(&mut self.start)
            .chain(&mut self.end)
    }

    pub fn l1_norm(&self) -> f64 {
        self.iter().map(|w| w.abs()).sum()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.iter().map(|w| w * w).sum()
    }
}

/// Linear-chain CRF over the nine BIO tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    pub features: FeatureInterner,
    pub weights: CrfWeights,
}

impl CrfModel {
    /// All-zero weights over an existing feature map.
    pub fn zeros(features: FeatureInterner) -> Self {
        let weights = CrfWeights::zeros(features.len());
        CrfModel { features, weights }
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Encodes tokens with the model's feature map; unseen features are dropped.
    pub fn encode(&self, tokens: &[Token]) -> SequenceFeatures {
        (0..tokens.len())
            .map(|i| self.features.encode(&crf_features(tokens, i)))
            .collect()
    }

    pub fn emission_weight(&self, feature: u32, tag: usize) -> f64 {
        self.weights.emissions[feature as usize * NUM_TAGS + tag]
    }

    pub fn set_emission_weight(&mut self, feature: u32, tag: usize, w: f64) {
        self.weights.emissions[feature as usize * NUM_TAGS + tag] = w;
    }

    pub fn lattice(&self, features: &[Vec<(u32, f64)>]) -> Lattice {
        let w = &self.weights;
        let emissions = features
            .iter()
            .map(|active| {
                let mut row = [0.0; NUM_TAGS];
                for &(f, v) in active {
                    let col = &w.emissions[f as usize * NUM_TAGS..(f as usize + 1) * NUM_TAGS];
                    for (r, c) in row.iter_mut().zip(col) {
                        *r += c * v;
                    }
                }
                row
            })
            .collect();
        Lattice {
            emissions,
            transitions: std::array::from_fn(|i| {
                std::array::from_fn(|j| w.transitions[i * NUM_TAGS + j])
            }),
            start: w.start.as_slice().try_into().expect("start has 9 entries"),
            end: w.end.as_slice().try_into().expect("end has 9 entries"),
        }
    }
}

impl SequenceTagger for CrfModel {
    fn tag_tokens(&self, tokens: &[Token]) -> Vec<Tag> {
        if tokens.is_empty() {
            return Vec::new();
        }
        sequence_tags(&self.lattice(&self.encode(tokens)).viterbi().0)
    }
}

/// Score of one tag path.
///
/// # Panics
/// If the sequence is empty or the lengths differ.
pub fn log_score(model: &CrfModel, features: &[Vec<(u32, f64)>], tags: &[usize]) -> f64 {
    model.lattice(features).path_score(tags)
}

/// # Panics
/// If the sequence is empty.
pub fn log_partition(model: &CrfModel, features: &[Vec<(u32, f64)>]) -> f64 {
    model.lattice(features).log_partition()
}

/// Adds `scale ×` (expected − observed) feature counts of one sequence to
/// `grad` and returns its negative log-likelihood.
fn accumulate_nll(model: &CrfModel, ex: &CrfExample, scale: f64, grad: &mut CrfWeights) -> f64 {
    let lattice = model.lattice(&ex.features);
    let m = lattice.marginals();
    let nll = m.log_partition - lattice.path_score(&ex.tags);
    for (t, active) in ex.features.iter().enumerate() {
        for &(f, v) in active {
            let col = &mut grad.emissions[f as usize * NUM_TAGS..(f as usize + 1) * NUM_TAGS];
            for (y, g) in col.iter_mut().enumerate() {
                *g += scale * v * m.unary[t][y];
            }
            col[ex.tags[t]] -= scale * v;
        }
    }
    for (t, pair) in m.pairwise.iter().enumerate() {
        for i in 0..NUM_TAGS {
            for j in 0..NUM_TAGS {
                grad.transitions[i * NUM_TAGS + j] += scale * pair[i][j];
            }
        }
        grad.transitions[ex.tags[t] * NUM_TAGS + ex.tags[t + 1]] -= scale;
    }
    let n = ex.tags.len();
    for y in 0..NUM_TAGS {
        grad.start[y] += scale * m.unary[0][y];
        grad.end[y] += scale * m.unary[n - 1][y];
    }
    grad.start[ex.tags[0]] -= scale;
    grad.end[ex.tags[n - 1]] -= scale;
    scale * nll
}

/// Value and (sub)gradient of `Σ NLL + c1‖w‖₁ + c2‖w‖₂²` over `batch`.
/// The L1 subgradient is taken as 0 at w = 0.
pub fn crf_gradient(
    model: &CrfModel,
    batch: &[CrfExample],
    c1: f64,
    c2: f64,
) -> Result<(f64, CrfWeights), NerError> {
    if batch.is_empty() {
        return Err(NerError::EmptyData);
    }
    let mut grad = CrfWeights::zeros(model.num_features());
    let mut objective = 0.0;
    for ex in batch {
        objective += accumulate_nll(model, ex, 1.0, &mut grad);
    }
    objective += c1 * model.weights.l1_norm() + c2 * model.weights.l2_norm_sq();
    for (g, w) in grad.iter_mut().zip(model.weights.iter()) {
        *g += 2.0 * c2 * w;
        if *w != 0.0 {
            *g += c1 * w.signum();
        }
    }
    if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(NerError::NonFinite("CRF objective".into()));
    }
    Ok((objective, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfTrainConfig {
    pub c1: f64,
    pub c2: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Stop once an epoch improves the objective by less than this
    /// fraction of its value. Zero disables early stopping.
    pub epsilon: f64,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        CrfTrainConfig {
            c1: 0.1,
            c2: 0.1,
            batch_size: 32,
            max_iterations: 100,
            seed: 0,
            learning_rate: 0.5,
            optimizer: OptimizerKind::Sgd,
            epsilon: 1e-5,
        }
    }
}

impl CrfTrainConfig {
    pub fn validate(&self) -> Result<(), NerError> {
        let bad = |m: &str| Err(NerError::InvalidConfig(m.to_string()));
        if !(self.c1 >= 0.0 && self.c2 >= 0.0 && self.c1.is_finite() && self.c2.is_finite()) {
            return bad("c1 and c2 must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return bad("epsilon must be non-negative");
        }
        Ok(())
    }
}

/// Interns the features of every training question and encodes its gold
/// BIO tags. Questions without tokens are skipped.
pub fn crf_examples(data: &[LabeledQuestion], features: &mut FeatureInterner) -> Vec<CrfExample> {
    data.iter()
        .filter_map(|q| {
            let seq = to_bio(q).sequence;
            if seq.is_empty() {
                return None;
            }
            let feats = (0..seq.len())
                .map(|i| features.encode_growing(&crf_features(&seq.tokens, i)))
                .collect();
            Some(CrfExample {
                features: feats,
                tags: seq.tags.iter().map(|t| t.index()).collect(),
            })
        })
        .collect()
}

fn objective(model: &CrfModel, data: &[CrfExample], c1: f64, c2: f64) -> Result<f64, NerError> {
    let mut total = 0.0;
    for ex in data {
        let lattice = model.lattice(&ex.features);
        total += lattice.log_partition() - lattice.path_score(&ex.tags);
    }
    total += c1 * model.weights.l1_norm() + c2 * model.weights.l2_norm_sq();
    if !total.is_finite() {
        return Err(NerError::NonFinite("CRF objective".into()));
    }
    Ok(total)
}

pub fn train_crf(data: &[LabeledQuestion], config: &CrfTrainConfig) -> Result<CrfModel, NerError> {
    train_crf_with_log(data, config).map(|(m, _)| m)
}

/// Mini-batch training of `Σ NLL + c1‖w‖₁ + c2‖w‖₂²`, divided by the
/// number of sequences N so the step size does not depend on corpus size.
///
/// Each batch B steps along the batch-mean NLL gradient plus the gradient
/// of the regularizers divided by N, an unbiased estimate of the scaled
/// objective. With SGD the L1 term is applied as a proximal shrink towards
/// zero that never crosses it; with Adam its subgradient joins the
/// gradient. Returns the scaled objective after each epoch.
pub fn train_crf_with_log(
    data: &[LabeledQuestion],
    config: &CrfTrainConfig,
) -> Result<(CrfModel, Vec<f64>), NerError> {
    config.validate()?;
    let mut interner = FeatureInterner::new();
    let examples = crf_examples(data, &mut interner);
    if examples.is_empty() {
        return Err(NerError::EmptyData);
    }
    let mut model = CrfModel::zeros(interner);
    let log = fit(&mut model, &examples, config)?;
    Ok((model, log))
}

/// Runs the optimizer on `model` in place over pre-encoded examples.
pub fn fit(
    model: &mut CrfModel,
    examples: &[CrfExample],
    config: &CrfTrainConfig,
) -> Result<Vec<f64>, NerError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(NerError::EmptyData);
    }
    let n = examples.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::new();
    let mut previous = objective(model, examples, config.c1, config.c2)?;
    for _ in 0..config.max_iterations {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut grad = CrfWeights::zeros(model.num_features());
            for &i in chunk {
                accumulate_nll(model, &examples[i], 1.0 / chunk.len() as f64, &mut grad);
            }
            let l1 = config.c1 / n;
            for (g, w) in grad.iter_mut().zip(model.weights.iter()) {
                *g += 2.0 * config.c2 / n * w;
                if config.optimizer == OptimizerKind::Adam && *w != 0.0 {
                    *g += l1 * w.signum();
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(NerError::NonFinite("CRF gradient".into()));
            }
            opt.step(model.weights.slices_mut(), grad.slices(), &[]);
            if config.optimizer == OptimizerKind::Sgd && l1 > 0.0 {
                let shrink = opt.learning_rate() * l1;
                for w in model.weights.iter_mut() {
                    *w = w.signum() * (w.abs() - shrink).max(0.0);
                }
            }
        }
        let current = objective(model, examples, config.c1, config.c2)?;
        log.push(current / n);
        let done = config.epsilon > 0.0
            && (previous - current).abs() <= config.epsilon * current.abs().max(1e-12);
        previous = current;
        if done {
            break;
        }
    }
    Ok(log)
}
