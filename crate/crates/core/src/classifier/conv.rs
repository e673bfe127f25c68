use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_classes, ClassifierError, QuestionClassifier, TrainConfig, NUM_CLASSES};
use crate::corpus::LabeledQuestion;
use crate::math::log_softmax;
use crate::optim::Optimizer;
use crate::textproc::{random_embeddings, tokenize, EmbeddingTable, Token};

/// `num_filters` filters of one width; `weights` is laid out
/// `[filter][offset][dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub width: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Embedding → multi-width convolution + ReLU → max-over-time pooling →
/// dropout → fully connected softmax.
///
/// Inputs shorter than the widest filter are right-padded with a fixed
/// zero PAD vector that is not a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvModel {
    pub embeddings: EmbeddingTable,
    pub banks: Vec<FilterBank>,
    /// `[class][hidden]`, hidden = `num_filters * banks.len()`.
    pub fc_weights: Vec<f64>,
    pub fc_bias: Vec<f64>,
    pub num_filters: usize,
    pub dropout: f64,
}

/// Gradient with the same layout as [`ConvModel::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub embeddings: Vec<f64>,
    pub banks: Vec<(Vec<f64>, Vec<f64>)>,
    pub fc_weights: Vec<f64>,
    pub fc_bias: Vec<f64>,
}

impl ConvGrad {
    fn zeros_like(model: &ConvModel) -> Self {
        ConvGrad {
            embeddings: vec![0.0; model.embeddings.matrix().len()],
            banks: model
                .banks
                .iter()
                .map(|b| (vec![0.0; b.weights.len()], vec![0.0; b.bias.len()]))
                .collect(),
            fc_weights: vec![0.0; model.fc_weights.len()],
            fc_bias: vec![0.0; NUM_CLASSES],
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embeddings];
        for (w, b) in &self.banks {
            out.push(w);
            out.push(b);
        }
        out.push(&self.fc_weights);
        out.push(&self.fc_bias);
        out
    }
}

struct Activation {
    rows: Vec<Option<usize>>,
    /// Per bank, per filter: position of the maximum pre-activation.
    argmax: Vec<Vec<usize>>,
    /// Per bank, per filter: the maximum pre-activation itself.
    pre: Vec<Vec<f64>>,
    hidden: Vec<f64>,
    mask: Option<Vec<f64>>,
    log_probs: [f64; NUM_CLASSES],
}

impl ConvModel {
    /// All-zero filters and classifier on top of `embeddings`.
    pub fn zeros(
        embeddings: EmbeddingTable,
        widths: &[usize],
        num_filters: usize,
        dropout: f64,
    ) -> Self {
        let d = embeddings.dim();
        let banks = widths
            .iter()
            .map(|&w| FilterBank {
                width: w,
                weights: vec![0.0; num_filters * w * d],
                bias: vec![0.0; num_filters],
            })
            .collect();
        let hidden = num_filters * widths.len();
        ConvModel {
            embeddings,
            banks,
            fc_weights: vec![0.0; NUM_CLASSES * hidden],
            fc_bias: vec![0.0; NUM_CLASSES],
            num_filters,
            dropout,
        }
    }

    /// Xavier-uniform filters and classifier weights, zero biases.
    pub fn init_random(
        embeddings: EmbeddingTable,
        widths: &[usize],
        num_filters: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut model = Self::zeros(embeddings, widths, num_filters, dropout);
        let d = model.embeddings.dim();
        for bank in &mut model.banks {
            let bound = (6.0 / (bank.width * d + num_filters) as f64).sqrt();
            bank.weights
                .iter_mut()
                .for_each(|w| *w = rng.gen_range(-bound..bound));
        }
        let bound = (6.0 / (model.hidden_size() + NUM_CLASSES) as f64).sqrt();
        model
            .fc_weights
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-bound..bound));
        model
    }

    pub fn hidden_size(&self) -> usize {
        self.num_filters * self.banks.len()
    }

    pub fn max_width(&self) -> usize {
        self.banks.iter().map(|b| b.width).max().unwrap_or(1)
    }

    /// Embedding rows for `tokens` (OOV row for unknown words), right-padded
    /// with `None` (PAD) up to the widest filter.
    pub fn encode_tokens(&self, tokens: &[Token]) -> Vec<Option<usize>> {
        let mut rows: Vec<Option<usize>> = tokens
            .iter()
            .map(|t| Some(self.embeddings.row_index(&t.surface)))
            .collect();
        while rows.len() < self.max_width() {
            rows.push(None);
        }
        rows
    }

    /// Parameter slices in a fixed order: embedding matrix, then each bank's
    /// weights and bias, then classifier weights and bias.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embeddings.matrix()];
        for b in &self.banks {
            out.push(&b.weights);
            out.push(&b.bias);
        }
        out.push(&self.fc_weights);
        out.push(&self.fc_bias);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embeddings.matrix_mut()];
        for b in &mut self.banks {
            out.push(&mut b.weights);
            out.push(&mut b.bias);
        }
        out.push(&mut self.fc_weights);
        out.push(&mut self.fc_bias);
        out
    }

    fn forward(&self, rows: Vec<Option<usize>>, mask: Option<Vec<f64>>) -> Activation {
        let d = self.embeddings.dim();
        let emb = self.embeddings.matrix();
        let nf = self.num_filters;
        let mut argmax = Vec::with_capacity(self.banks.len());
        let mut pre = Vec::with_capacity(self.banks.len());
        let mut hidden = Vec::with_capacity(self.hidden_size());
        for bank in &self.banks {
            let w = bank.width;
            let positions = rows.len() + 1 - w;
            let mut best_pos = vec![0; nf];
            let mut best = vec![f64::NEG_INFINITY; nf];
            for p in 0..positions {
                for f in 0..nf {
                    let mut z = bank.bias[f];
                    for o in 0..w {
                        if let Some(r) = rows[p + o] {
                            let x = &emb[r * d..(r + 1) * d];
                            let k = &bank.weights[(f * w + o) * d..(f * w + o + 1) * d];
                            z += x.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    if z > best[f] {
                        best[f] = z;
                        best_pos[f] = p;
                    }
                }
            }
            hidden.extend(best.iter().map(|z| z.max(0.0)));
            argmax.push(best_pos);
            pre.push(best);
        }
        if let Some(m) = &mask {
            for (h, k) in hidden.iter_mut().zip(m) {
                *h *= k;
            }
        }
        let hs = self.hidden_size();
        let mut logits = [0.0; NUM_CLASSES];
        for (c, l) in logits.iter_mut().enumerate() {
            let row = &self.fc_weights[c * hs..(c + 1) * hs];
            *l = self.fc_bias[c] + row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        Activation {
            rows,
            argmax,
            pre,
            hidden,
            mask,
            log_probs: log_softmax(&logits),
        }
    }

    fn backward(&self, act: &Activation, label: usize, scale: f64, grad: &mut ConvGrad) {
        let d = self.embeddings.dim();
        let emb = self.embeddings.matrix();
        let hs = self.hidden_size();
        let mut delta = act.log_probs.map(|l| l.exp() * scale);
        delta[label] -= scale;
        let mut dh = vec![0.0; hs];
        for c in 0..NUM_CLASSES {
            grad.fc_bias[c] += delta[c];
            let row = &self.fc_weights[c * hs..(c + 1) * hs];
            let grow = &mut grad.fc_weights[c * hs..(c + 1) * hs];
            for h in 0..hs {
                grow[h] += delta[c] * act.hidden[h];
                dh[h] += row[h] * delta[c];
            }
        }
        if let Some(m) = &act.mask {
            for (g, k) in dh.iter_mut().zip(m) {
                *g *= k;
            }
        }
        for (b, bank) in self.banks.iter().enumerate() {
            let w = bank.width;
            let (gw, gb) = &mut grad.banks[b];
            for f in 0..self.num_filters {
                if act.pre[b][f] <= 0.0 {
                    continue;
                }
                let dz = dh[b * self.num_filters + f];
                gb[f] += dz;
                let p = act.argmax[b][f];
                for o in 0..w {
                    let Some(r) = act.rows[p + o] else { continue };
                    let base = (f * w + o) * d;
                    for j in 0..d {
                        gw[base + j] += dz * emb[r * d + j];
                        grad.embeddings[r * d + j] += dz * bank.weights[base + j];
                    }
                }
            }
        }
    }

    fn dropout_mask(&self, rng: &mut impl Rng) -> Option<Vec<f64>> {
        if self.dropout <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout;
        Some(
            (0..self.hidden_size())
                .map(|_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }

    /// Pooled (pre-dropout) feature vector for `tokens`.
    pub fn pooled_features(&self, tokens: &[Token]) -> Vec<f64> {
        self.forward(self.encode_tokens(tokens), None).hidden
    }
}

impl QuestionClassifier for ConvModel {
    fn log_probs(&self, text: &str) -> [f64; NUM_CLASSES] {
        forward_conv(self, &tokenize(text))
    }
}

/// Class log-probabilities with dropout disabled.
pub fn forward_conv(model: &ConvModel, tokens: &[Token]) -> [f64; NUM_CLASSES] {
    model.forward(model.encode_tokens(tokens), None).log_probs
}

type Encoded = (Vec<Option<usize>>, usize);

fn loss_and_grad(
    model: &ConvModel,
    batch: &[&Encoded],
    mut rng: Option<&mut ChaCha8Rng>,
) -> (f64, ConvGrad) {
    let mut grad = ConvGrad::zeros_like(model);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (rows, label) in batch.iter().copied() {
        let mask = rng.as_deref_mut().and_then(|r| model.dropout_mask(r));
        let act = model.forward(rows.clone(), mask);
        loss -= act.log_probs[*label] * scale;
        model.backward(&act, *label, scale, &mut grad);
    }
    (loss, grad)
}

fn encode(model: &ConvModel, data: &[LabeledQuestion]) -> Vec<Encoded> {
    data.iter()
        .map(|q| (model.encode_tokens(&tokenize(&q.text)), q.qtype.index()))
        .collect()
}

/// Mean cross-entropy over `batch` (dropout off) and its exact gradient.
///
/// # Panics
/// If `batch` is empty.
pub fn grad_conv(model: &ConvModel, batch: &[LabeledQuestion]) -> (f64, ConvGrad) {
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let encoded = encode(model, batch);
    let refs: Vec<&Encoded> = encoded.iter().collect();
    loss_and_grad(model, &refs, None)
}

fn mean_loss(model: &ConvModel, data: &[Encoded]) -> f64 {
    data.iter()
        .map(|(rows, y)| -model.forward(rows.clone(), None).log_probs[*y])
        .sum::<f64>()
        / data.len() as f64
}

pub fn train_conv(
    data: &[LabeledQuestion],
    config: &TrainConfig,
    pretrained: Option<&EmbeddingTable>,
) -> Result<ConvModel, ClassifierError> {
    train_conv_with_log(data, config, pretrained).map(|(m, _)| m)
}

/// Mini-batch training with seeded shuffling, Xavier init and dropout masks.
/// Without `pretrained` vectors, the vocabulary is the lowercased training
/// tokens with random embeddings. Returns the per-epoch training loss.
pub fn train_conv_with_log(
    data: &[LabeledQuestion],
    config: &TrainConfig,
    pretrained: Option<&EmbeddingTable>,
) -> Result<(ConvModel, Vec<f64>), ClassifierError> {
    config.validate()?;
    check_classes(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let embeddings = match pretrained {
        Some(table) => {
            let mut t = table.clone();
            t.trainable = true;
            t
        }
        None => {
            let vocab: Vec<String> = data
                .iter()
                .flat_map(|q| tokenize(&q.text))
                .map(|t| t.lower)
                .collect();
            random_embeddings(&vocab, config.embedding_dim, rng.gen())?
        }
    };
    let mut model = ConvModel::init_random(
        embeddings,
        &config.widths,
        config.num_filters,
        config.dropout,
        &mut rng,
    );
    let encoded = encode(&model, data);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| &encoded[i]).collect();
            let (loss, grad) = loss_and_grad(&model, &batch, Some(&mut rng));
            if !loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss { epoch });
            }
            let frozen = !model.embeddings.trainable;
            opt.step(model.param_slices_mut(), grad.slices(), &[frozen]);
        }
        let loss = mean_loss(&model, &encoded);
        if !loss.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { epoch });
        }
        log.push(loss);
    }
    Ok((model, log))
}
