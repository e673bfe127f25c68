use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_classes, ClassifierError, QuestionClassifier, TrainConfig, NUM_CLASSES};
use crate::corpus::LabeledQuestion;
use crate::math::log_softmax;
use crate::textproc::tokenize;

/// Softmax regression over hashed features. Weights are stored
/// feature-major: column `f` occupies `weights[f * 8..f * 8 + 8]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SparseRepr", into = "SparseRepr")]
pub struct LinearModel {
    hash_bits: u32,
    weights: Vec<f64>,
    bias: [f64; NUM_CLASSES],
}

#[derive(Serialize, Deserialize)]
struct SparseRepr {
    hash_bits: u32,
    bias: [f64; NUM_CLASSES],
    columns: Vec<(usize, [f64; NUM_CLASSES])>,
}

impl From<LinearModel> for SparseRepr {
    fn from(m: LinearModel) -> Self {
        let columns = m
            .weights
            .chunks_exact(NUM_CLASSES)
            .enumerate()
            .filter(|(_, c)| c.iter().any(|&w| w != 0.0))
            .map(|(f, c)| (f, c.try_into().expect("column width")))
            .collect();
        SparseRepr {
            hash_bits: m.hash_bits,
            bias: m.bias,
            columns,
        }
    }
}

impl From<SparseRepr> for LinearModel {
    fn from(r: SparseRepr) -> Self {
        let mut m = LinearModel::zeros(r.hash_bits);
        for (f, col) in r.columns {
            if f < m.num_features() {
                m.weights[f * NUM_CLASSES..(f + 1) * NUM_CLASSES].copy_from_slice(&col);
            }
        }
        m.bias = r.bias;
        m
    }
}

fn hash_feature(prefix: &str, body: &str, mask: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(prefix.as_bytes());
    h.write(body.as_bytes());
    (h.finish() as usize) & mask
}

/// Hashed word unigrams plus character 3–5-grams of each `<word>`, summed
/// into `2^hash_bits` buckets and L2-normalised. Sorted by bucket.
pub fn linear_features(text: &str, hash_bits: u32) -> Vec<(usize, f64)> {
    let mask = (1usize << hash_bits) - 1;
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for tok in tokenize(text) {
        *counts
            .entry(hash_feature("w:", &tok.lower, mask))
            .or_default() += 1.0;
        let padded: Vec<char> = std::iter::once('<')
            .chain(tok.lower.chars())
            .chain(std::iter::once('>'))
            .collect();
        for n in 3..=5 {
            for gram in padded.windows(n) {
                let s: String = gram.iter().collect();
                *counts.entry(hash_feature("c:", &s, mask)).or_default() += 1.0;
            }
        }
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    counts.into_iter().map(|(f, v)| (f, v / norm)).collect()
}

/// Gradient of the mean cross-entropy; weight columns are sparse.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearGrad {
    pub weights: BTreeMap<usize, [f64; NUM_CLASSES]>,
    pub bias: [f64; NUM_CLASSES],
}

impl LinearModel {
    pub fn zeros(hash_bits: u32) -> Self {
        LinearModel {
            hash_bits,
            weights: vec![0.0; (1usize << hash_bits) * NUM_CLASSES],
            bias: [0.0; NUM_CLASSES],
        }
    }

    pub fn hash_bits(&self) -> u32 {
        self.hash_bits
    }

    pub fn num_features(&self) -> usize {
        1 << self.hash_bits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64; NUM_CLASSES] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64; NUM_CLASSES] {
        &mut self.bias
    }

    fn logits(&self, features: &[(usize, f64)]) -> [f64; NUM_CLASSES] {
        let mut out = self.bias;
        for &(f, v) in features {
            let col = &self.weights[f * NUM_CLASSES..(f + 1) * NUM_CLASSES];
            for (o, w) in out.iter_mut().zip(col) {
                *o += w * v;
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.bias.iter().chain(&self.weights).all(|w| w.is_finite())
    }
}

impl QuestionClassifier for LinearModel {
    fn log_probs(&self, text: &str) -> [f64; NUM_CLASSES] {
        log_softmax(&self.logits(&linear_features(text, self.hash_bits)))
    }
}

type Encoded = (Vec<(usize, f64)>, usize);

fn loss_and_grad(model: &LinearModel, batch: &[&Encoded]) -> (f64, LinearGrad) {
    let mut grad = LinearGrad::default();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (features, label) in batch.iter().copied() {
        let lp = log_softmax(&model.logits(features));
        loss -= lp[*label] * scale;
        let mut delta = lp.map(|l| l.exp() * scale);
        delta[*label] -= scale;
        for (b, d) in grad.bias.iter_mut().zip(&delta) {
            *b += d;
        }
        for &(f, v) in features {
            let col = grad.weights.entry(f).or_insert([0.0; NUM_CLASSES]);
            for (c, d) in col.iter_mut().zip(&delta) {
                *c += d * v;
            }
        }
    }
    (loss, grad)
}

fn encode(data: &[LabeledQuestion], hash_bits: u32) -> Vec<Encoded> {
    data.iter()
        .map(|q| (linear_features(&q.text, hash_bits), q.qtype.index()))
        .collect()
}

/// Mean cross-entropy over `batch` and its gradient.
pub fn linear_gradient(model: &LinearModel, batch: &[LabeledQuestion]) -> (f64, LinearGrad) {
    let encoded = encode(batch, model.hash_bits);
    let refs: Vec<&Encoded> = encoded.iter().collect();
    loss_and_grad(model, &refs)
}

fn mean_loss(model: &LinearModel, data: &[Encoded]) -> f64 {
    data.iter()
        .map(|(f, y)| -log_softmax(&model.logits(f))[*y])
        .sum::<f64>()
        / data.len() as f64
}

pub fn train_linear(
    data: &[LabeledQuestion],
    config: &TrainConfig,
) -> Result<LinearModel, ClassifierError> {
    train_linear_with_log(data, config).map(|(m, _)| m)
}

/// Mini-batch SGD from zero weights. Also returns the training-set mean
/// cross-entropy after each epoch.
pub fn train_linear_with_log(
    data: &[LabeledQuestion],
    config: &TrainConfig,
) -> Result<(LinearModel, Vec<f64>), ClassifierError> {
    config.validate()?;
    check_classes(data)?;
    let encoded = encode(data, config.hash_bits);
    let mut model = LinearModel::zeros(config.hash_bits);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| &encoded[i]).collect();
            let (loss, grad) = loss_and_grad(&model, &batch);
            if !loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss { epoch });
            }
            let lr = config.learning_rate;
            for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                *b -= lr * g;
            }
            for (f, col) in grad.weights {
                let w = &mut model.weights[f * NUM_CLASSES..(f + 1) * NUM_CLASSES];
                for (w, g) in w.iter_mut().zip(&col) {
                    *w -= lr * g;
                }
            }
        }
        let loss = mean_loss(&model, &encoded);
        if !loss.is_finite() || !model.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { epoch });
        }
        log.push(loss);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QuestionType;

    fn q(text: &str, qtype: QuestionType) -> LabeledQuestion {
        LabeledQuestion::new(text, text, qtype, []).unwrap()
    }

    fn separable() -> Vec<LabeledQuestion> {
        let mut data = Vec::new();
        for i in 0..20 {
            data.push(q(
                &format!("where can I buy item{i} pills"),
                QuestionType::Availability,
            ));
            data.push(q(
                &format!("is item{i} safe during pregnancy"),
                QuestionType::Safety,
            ));
        }
        data
    }

    #[test]
    fn fits_separable_data() {
        let data = separable();
        let config = TrainConfig {
            epochs: 30,
            ..TrainConfig::desk()
        };
        let (model, log) = train_linear_with_log(&data, &config).unwrap();
        let correct = data
            .iter()
            .filter(|x| model.predict_qtype(&x.text).0 == x.qtype)
            .count();
        assert_eq!(correct, data.len());
        assert!(log.last().unwrap() < &log[0]);
        for w in log.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "loss rose: {log:?}");
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let data = vec![q("a", QuestionType::Usage), q("b", QuestionType::Usage)];
        assert!(matches!(
            train_linear(&data, &TrainConfig::desk()),
            Err(ClassifierError::SingleClass(QuestionType::Usage))
        ));
        assert!(matches!(
            train_linear(&[], &TrainConfig::desk()),
            Err(ClassifierError::EmptyData)
        ));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = separable();
        let config = TrainConfig {
            epochs: 3,
            seed: 9,
            ..TrainConfig::desk()
        };
        assert_eq!(
            train_linear(&data, &config).unwrap(),
            train_linear(&data, &config).unwrap()
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = separable()[..6].to_vec();
        let bits = 5;
        let mut model = LinearModel::zeros(bits);
        let mut seed = 17u64;
        for w in model.weights.iter_mut().chain(model.bias.iter_mut()) {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *w = ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
        }
        let (_, grad) = linear_gradient(&model, &data);
        let h = 1e-5;
        let n = model.weights.len();
        for i in 0..n + NUM_CLASSES {
            let analytic = if i < n {
                grad.weights
                    .get(&(i / NUM_CLASSES))
                    .map_or(0.0, |c| c[i % NUM_CLASSES])
            } else {
                grad.bias[i - n]
            };
            let mut plus = model.clone();
            let mut minus = model.clone();
            if i < n {
                plus.weights[i] += h;
                minus.weights[i] -= h;
            } else {
                plus.bias[i - n] += h;
                minus.bias[i - n] -= h;
            }
            let numeric =
                (linear_gradient(&plus, &data).0 - linear_gradient(&minus, &data).0) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4 || (analytic - numeric).abs() < 1e-10,
                "param {i}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn sparse_serialization_round_trip() {
        let data = separable();
        let model = train_linear(
            &data,
            &TrainConfig {
                epochs: 2,
                hash_bits: 10,
                ..TrainConfig::desk()
            },
        )
        .unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: LinearModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
