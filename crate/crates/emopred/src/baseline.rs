//! Bag-of-words multinomial logistic regression, the traditional-ML
//! comparison point for the transformer.
//!
//! Feature vectors live in the tokenizer's vocabulary space: one column per
//! vocabulary id, with the five special-token columns permanently zero
//! (specials never occur in text, so they carry no signal; keeping the
//! columns makes the weight matrix line up with vocabulary ids directly).
//! Training is full-batch Adam from zero-initialized weights on the convex
//! softmax cross-entropy objective plus an L2 penalty on the weights (not
//! the bias — the bias must stay free so that under crushing regularization
//! predictions fall back to the class prior rather than uniform). With no
//! sampling and zero init, training is deterministic unconditionally.

use crate::data::RawTweetRecord;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::numeric::{AdamState, Parameter, Scalar, Tape, Tensor};
use crate::tokenizer::{Vocabulary, FIRST_REGULAR_ID};

/// Dense bag-of-words design matrix with row-aligned labels.
#[derive(Clone, Debug)]
pub struct BowFeatures {
    /// [n_records × vocab_size]; special-token columns are all zero.
    pub matrix: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Presence indicators instead of counts.
    pub binary: bool,
}

impl BowFeatures {
    pub fn num_records(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Count (or mark) every in-vocabulary token of every record. Texts are
/// expected to be cleaned already: they are split on whitespace and looked
/// up verbatim, so out-of-vocabulary tokens contribute nothing.
pub fn featurize(
    records: &[RawTweetRecord],
    vocab: &Vocabulary,
    binary: bool,
) -> Result<BowFeatures> {
    let v = vocab.size();
    let mut data = vec![0.0f32; records.len() * v];
    let mut labels = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let row = &mut data[i * v..(i + 1) * v];
        for tok in r.text.split_whitespace() {
            if let Some(id) = vocab.id(tok) {
                if id >= FIRST_REGULAR_ID {
                    if binary {
                        row[id] = 1.0;
                    } else {
                        row[id] += 1.0;
                    }
                }
            }
        }
        labels.push(r.label);
    }
    Ok(BowFeatures {
        matrix: Tensor::from_vec(&[records.len(), v], data)?,
        labels,
        binary,
    })
}

/// A trained logistic-regression baseline, plus its per-epoch objective
/// values (cross-entropy + L2 penalty, measured before each update) for
/// convergence checks.
#[derive(Clone, Debug)]
pub struct LogregModel {
    /// [vocab_size × num_classes].
    pub weights: Tensor<f32>,
    /// [num_classes].
    pub bias: Tensor<f32>,
    pub binary: bool,
    pub losses: Vec<f64>,
}

impl LogregModel {
    /// Class scores for one feature row.
    fn scores(&self, row: &[f32]) -> Vec<f64> {
        let c = self.bias.numel();
        let w = self.weights.as_slice();
        let b = self.bias.as_slice();
        (0..c)
            .map(|k| {
                let dot: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|&(_, &x)| x != 0.0)
                    .map(|(t, &x)| x as f64 * w[t * c + k] as f64)
                    .sum();
                dot + b[k] as f64
            })
            .collect()
    }

    /// Predicted class per feature row; ties resolve to the lowest label.
    pub fn predict(&self, features: &BowFeatures) -> Vec<usize> {
        (0..features.num_records())
            .map(|i| {
                let scores = self.scores(features.matrix.row(i));
                let mut best = 0;
                for (k, &s) in scores.iter().enumerate().skip(1) {
                    if s > scores[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Fit multinomial logistic regression by full-batch Adam. The objective is
/// mean softmax cross-entropy plus `l2 · Σ w²` over the weight matrix; it
/// is convex, so with a small learning rate the recorded loss decreases
/// monotonically.
pub fn train_logreg(
    features: &BowFeatures,
    num_classes: usize,
    epochs: usize,
    lr: f64,
    l2: f64,
) -> Result<LogregModel> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "logistic regression needs at least 2 classes, got {num_classes}"
        )));
    }
    if epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if l2 < 0.0 || !l2.is_finite() {
        return Err(Error::Config(format!("l2 penalty {l2} must be non-negative")));
    }
    let n = features.num_records();
    if n < num_classes {
        return Err(Error::Data(format!(
            "{n} records cannot cover {num_classes} classes"
        )));
    }
    if let Some(&bad) = features.labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let distinct = {
        let mut seen = vec![false; num_classes];
        for &l in &features.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Data(
            "degenerate training data: every record has the same class".into(),
        ));
    }

    let v = features.vocab_size();
    let mut params = vec![
        Parameter::new("baseline.weights", Tensor::<f32>::zeros(&[v, num_classes])),
        Parameter::new("baseline.bias", Tensor::<f32>::zeros(&[num_classes])),
    ];
    let mut adam = AdamState::with_lr(lr)?;
    let mut losses = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        let mut tape = Tape::new();
        let x = tape.leaf(features.matrix.clone())?;
        let w = tape.leaf(params[0].value.clone())?;
        let b = tape.leaf(params[1].value.clone())?;
        let scores = tape.matmul(x, w)?;
        let logits = tape.add_bias_row(scores, b)?;
        let ce = tape.cross_entropy(logits, &features.labels)?;
        tape.backward(ce)?;

        let penalty: f64 = params[0]
            .value
            .as_slice()
            .iter()
            .map(|&wi| (wi as f64) * (wi as f64))
            .sum::<f64>()
            * l2;
        losses.push(Scalar::to_f64(tape.value(ce).item()) + penalty);

        // CE gradients from the tape, plus the analytic L2 term 2·l2·w on
        // the weights only.
        if let Some(g) = tape.grad(w) {
            params[0].accumulate_grad(g)?;
        }
        if l2 > 0.0 {
            let reg: Vec<f32> = params[0]
                .value
                .as_slice()
                .iter()
                .map(|&wi| (2.0 * l2 * wi as f64) as f32)
                .collect();
            params[0].accumulate_grad(&Tensor::from_vec(&[v, num_classes], reg)?)?;
        }
        if let Some(g) = tape.grad(b) {
            params[1].accumulate_grad(g)?;
        }
        adam.step(&mut params)?;
    }

    let bias = params.pop().expect("two params").value;
    let weights = params.pop().expect("one param").value;
    Ok(LogregModel {
        weights,
        bias,
        binary: features.binary,
        losses,
    })
}

/// Featurize `records` the same way the model was trained and score its
/// argmax predictions through the metrics module. Texts are expected to be
/// cleaned already, exactly as for [`featurize`].
pub fn eval_baseline(
    model: &LogregModel,
    records: &[RawTweetRecord],
    vocab: &Vocabulary,
) -> Result<MetricsReport> {
    if vocab.size() != model.weights.shape()[0] {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the baseline was trained on {}",
            vocab.size(),
            model.weights.shape()[0]
        )));
    }
    let features = featurize(records, vocab, model.binary)?;
    let num_classes = model.bias.numel();
    if let Some(&bad) = features.labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let preds = model.predict(&features);
    let matrix = metrics::confusion(&preds, &features.labels, num_classes)?;
    metrics::report(&matrix)
}
