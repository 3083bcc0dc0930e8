//! MLM pretraining and supervised fine-tuning loops.
//!
//! Both loops follow the same discipline: one seed fans out into named PRNG
//! sub-streams (masking, shuffling, dropout, probing), every stochastic
//! choice draws from its stream in a fixed order, and floating-point
//! reductions happen in a fixed order — so identical (seed, config, data)
//! yield bit-identical curves and weights. The only per-run value is the
//! `wall_seconds` curve column, which records real elapsed time and is
//! excluded from determinism comparisons.
//!
//! Pretraining has no held-out split; its per-epoch validation columns come
//! from a deterministic eval-mode probe that masks a fresh sample of
//! positions and measures cross-entropy and top-1 recovery on the training
//! corpus itself.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::data::{DatasetBundle, LabelMapping, RawTweetRecord};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{
    classify, encoder_forward, mlm_logits, pool, predict_emoji, Model,
};
use crate::numeric::{AdamState, Prng, Scalar, Tape, Var};
use crate::preprocess::{self, CleanConfig};
use crate::tokenizer::{self, TokenSequence, Vocabulary, FIRST_REGULAR_ID, MASK};

/// How selected MLM positions are corrupted: the classic 80/10/10 split
/// between the MASK token, a random vocabulary token, and no change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    /// Probability that a maskable position is selected for prediction.
    pub mask_prob: f64,
    pub replace_mask_frac: f64,
    pub replace_random_frac: f64,
    pub keep_frac: f64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            mask_prob: 0.15,
            replace_mask_frac: 0.8,
            replace_random_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MlmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "mask_prob {} not in [0, 1]",
                self.mask_prob
            )));
        }
        let fracs = [
            self.replace_mask_frac,
            self.replace_random_frac,
            self.keep_frac,
        ];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(
                "MLM corruption fractions must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = fracs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "MLM corruption fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Knobs shared by both training loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop after this many consecutive epochs without a new best
    /// validation loss; `None` always runs every epoch.
    pub early_stop_patience: Option<usize>,
    pub mlm: MlmConfig,
}

impl Default for TrainConfig {
    /// The small-dataset recipe: 10 epochs, batches of 16, Adam at 1e-3.
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 42,
            early_stop_patience: None,
            mlm: MlmConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        self.mlm.validate()
    }
}

/// One epoch of a training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_seconds: f64,
}

/// Per-epoch training history. Rows are appended in order; epoch indices
/// are contiguous from 1 and every loss is finite.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    rows: Vec<CurveRow>,
}

impl TrainingCurve {
    pub fn new() -> Self {
        TrainingCurve::default()
    }

    pub fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: CurveRow) -> Result<()> {
        if row.epoch != self.rows.len() + 1 {
            return Err(Error::Data(format!(
                "curve epoch {} after {} recorded rows is not contiguous",
                row.epoch,
                self.rows.len()
            )));
        }
        let finite = row.train_loss.is_finite()
            && row.val_loss.is_finite()
            && row.val_accuracy.is_finite()
            && row.wall_seconds.is_finite();
        if !finite {
            return Err(Error::NonFinite(format!(
                "curve row for epoch {}",
                row.epoch
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Train-loss column, in epoch order.
    pub fn train_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }
}

const CURVE_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy,wall_seconds";

/// Write a curve as CSV: the fixed header plus one row per epoch, floats
/// printed with nine significant digits so a reload reproduces the printed
/// values exactly.
pub fn export_curve(curve: &TrainingCurve, path: &Path) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::Data("cannot export an empty training curve".into()));
    }
    let mut out = String::with_capacity(64 * (curve.len() + 1));
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for r in curve.rows() {
        // Infallible: writing to a String cannot fail.
        let _ = writeln!(
            out,
            "{},{:.8e},{:.8e},{:.8e},{:.8e}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.wall_seconds
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read back a CSV written by [`export_curve`].
pub fn load_curve(path: &Path) -> Result<TrainingCurve> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content.lines();
    match lines.next() {
        Some(h) if h == CURVE_HEADER => {}
        other => {
            return Err(Error::Schema(format!(
                "curve header {other:?}, expected {CURVE_HEADER:?}"
            )))
        }
    }
    let mut curve = TrainingCurve::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Schema(format!(
                "curve line {} has {} fields, expected 5",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Schema(format!("bad number {s:?} on line {}", lineno + 2)))
        };
        let epoch: usize = fields[0]
            .parse()
            .map_err(|_| Error::Schema(format!("bad epoch {:?} on line {}", fields[0], lineno + 2)))?;
        curve.push(CurveRow {
            epoch,
            train_loss: parse(fields[1])?,
            val_loss: parse(fields[2])?,
            val_accuracy: parse(fields[3])?,
            wall_seconds: parse(fields[4])?,
        })?;
    }
    if curve.is_empty() {
        return Err(Error::Data("curve file contains no rows".into()));
    }
    Ok(curve)
}

/// Trailing moving average with the window clamped at the start, so the
/// output has the same length as the input.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(window - 1);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Whether the smoothed loss over the final half of training never rises by
/// more than `tol` between consecutive epochs.
pub fn final_half_non_increasing(losses: &[f64], tol: f64) -> bool {
    let sm = smoothed(losses, 5);
    let tail = &sm[sm.len() / 2..];
    tail.windows(2).all(|w| w[1] <= w[0] + tol)
}

/// Positions of a sequence eligible for MLM corruption: strictly between
/// CLS and SEP, and holding a regular (non-special) token.
pub fn maskable_positions(seq: &TokenSequence) -> Vec<usize> {
    if seq.true_length < 3 {
        return Vec::new();
    }
    (1..seq.true_length - 1)
        .filter(|&i| seq.ids[i] >= FIRST_REGULAR_ID)
        .collect()
}

/// One MLM-corrupted sequence: the corrupted ids plus the selected
/// positions and their original tokens (the prediction targets).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Corrupt one selected token per the configured fractions.
fn roll_corruption(original: usize, mlm: &MlmConfig, vocab_size: usize, rng: &mut Prng) -> Result<usize> {
    let r = rng.uniform();
    if r < mlm.replace_mask_frac {
        Ok(MASK)
    } else if r < mlm.replace_mask_frac + mlm.replace_random_frac {
        if vocab_size <= FIRST_REGULAR_ID {
            return Err(Error::Config(
                "random-token replacement needs at least one regular vocabulary entry".into(),
            ));
        }
        Ok(FIRST_REGULAR_ID + rng.below(vocab_size - FIRST_REGULAR_ID))
    } else {
        Ok(original)
    }
}

/// Sample an MLM corruption of `seq`: each maskable position is selected
/// with probability `mask_prob`; selected positions are replaced by MASK,
/// a random regular token, or kept, per the configured fractions. The
/// selection may be empty.
pub fn apply_mlm_masking(
    seq: &TokenSequence,
    mlm: &MlmConfig,
    vocab_size: usize,
    rng: &mut Prng,
) -> Result<MaskedSequence> {
    mlm.validate()?;
    let mut ids = seq.ids.clone();
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for i in maskable_positions(seq) {
        if rng.bernoulli(mlm.mask_prob) {
            positions.push(i);
            labels.push(seq.ids[i]);
            ids[i] = roll_corruption(seq.ids[i], mlm, vocab_size, rng)?;
        }
    }
    Ok(MaskedSequence {
        ids,
        positions,
        labels,
    })
}

/// Eval-mode MLM measurement: cross-entropy and top-1 recovery over a fresh
/// sample of masked positions (all replaced by MASK — this probes recovery,
/// not the training-time corruption mix).
#[derive(Clone, Debug)]
pub struct MlmProbe {
    /// Mean cross-entropy over all probed positions.
    pub loss: f64,
    /// Number of positions probed.
    pub masked: usize,
    /// Positions whose argmax prediction recovered the original token.
    pub correct: usize,
}

impl MlmProbe {
    pub fn recovery_rate(&self) -> f64 {
        self.correct as f64 / self.masked as f64
    }
}

/// Run an MLM probe over a corpus. At least one position is always probed
/// (forced onto the first maskable token if sampling selects none), so the
/// result is well defined whenever the corpus has any maskable token.
pub fn mlm_probe(
    model: &Model<f32>,
    sequences: &[TokenSequence],
    mask_prob: f64,
    rng: &mut Prng,
) -> Result<MlmProbe> {
    let mut selected: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, seq) in sequences.iter().enumerate() {
        let picks: Vec<usize> = maskable_positions(seq)
            .into_iter()
            .filter(|_| rng.bernoulli(mask_prob))
            .collect();
        if !picks.is_empty() {
            selected.push((i, picks));
        }
    }
    if selected.is_empty() {
        let forced = sequences
            .iter()
            .enumerate()
            .find_map(|(i, s)| maskable_positions(s).first().map(|&p| (i, vec![p])));
        match forced {
            Some(pair) => selected.push(pair),
            None => return Err(Error::Data("corpus has no maskable tokens".into())),
        }
    }

    let mut loss_sum = 0.0;
    let mut masked = 0usize;
    let mut correct = 0usize;
    for (i, picks) in &selected {
        let seq = &sequences[*i];
        let mut ids = seq.ids.clone();
        for &p in picks {
            ids[p] = MASK;
        }
        let probe_seq = TokenSequence {
            ids,
            attention_mask: seq.attention_mask.clone(),
            true_length: seq.true_length,
        };
        let labels: Vec<usize> = picks.iter().map(|&p| seq.ids[p]).collect();

        let mut tape = Tape::new();
        let vars = model.encoder.bind(&mut tape)?;
        let trace = encoder_forward(&mut tape, &vars, &probe_seq, &model.config, false, None)?;
        let token_t = tape.transpose(vars.token)?;
        let logits = mlm_logits(&mut tape, trace.hidden, token_t, vars.mlm_bias, picks)?;
        let lv = tape.value(logits);
        for (row, &label) in (0..picks.len()).zip(&labels) {
            let r = lv.row(row);
            loss_sum += row_cross_entropy(r, label);
            masked += 1;
            if argmax(r) == label {
                correct += 1;
            }
        }
    }
    Ok(MlmProbe {
        loss: loss_sum / masked as f64,
        masked,
        correct,
    })
}

/// Stable −log softmax(row)[label] in f64.
fn row_cross_entropy<F: Scalar>(row: &[F], label: usize) -> f64 {
    let max = row
        .iter()
        .map(|&v| Scalar::to_f64(v))
        .fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = row
        .iter()
        .map(|&v| (Scalar::to_f64(v) - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    lse - Scalar::to_f64(row[label])
}

/// Index of the largest entry; ties resolve to the lowest index.
fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean of scalar loss vars already on the tape.
fn mean_of<F: Scalar>(tape: &mut Tape<F>, losses: &[Var]) -> Result<Var> {
    let mut acc = *losses
        .first()
        .ok_or_else(|| Error::Data("mean of zero losses".into()))?;
    for &l in &losses[1..] {
        acc = tape.add(acc, l)?;
    }
    if losses.len() > 1 {
        acc = tape.scale(acc, 1.0 / losses.len() as f64)?;
    }
    Ok(acc)
}

/// Masked-language-model pretraining over already-encoded sequences. The
/// model's encoder (embeddings, layers, tied-projection bias) is updated in
/// place; the classification head is untouched. Returns the per-epoch
/// curve, whose validation columns come from the eval-mode probe.
pub fn pretrain_mlm(
    model: &mut Model<f32>,
    sequences: &[TokenSequence],
    config: &TrainConfig,
) -> Result<TrainingCurve> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::Data("empty pretraining corpus".into()));
    }
    if config.mlm.mask_prob == 0.0 {
        return Err(Error::Data(
            "mask_prob 0 never selects a position, so the MLM loss is undefined".into(),
        ));
    }
    let vocab_size = model.config.vocab_size;
    if !sequences
        .iter()
        .any(|s| !maskable_positions(s).is_empty())
    {
        return Err(Error::Data("corpus has no maskable tokens".into()));
    }

    let root = Prng::new(config.seed);
    let mut masking_rng = root.substream("masking");
    let mut shuffle_rng = root.substream("shuffling");
    let mut dropout_rng = root.substream("dropout");
    let mut adam = AdamState::with_lr(config.learning_rate)?;
    let mut curve = TrainingCurve::new();
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut examples = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut masked: Vec<(usize, MaskedSequence)> = batch
                .iter()
                .map(|&i| {
                    apply_mlm_masking(&sequences[i], &config.mlm, vocab_size, &mut masking_rng)
                        .map(|m| (i, m))
                })
                .collect::<Result<_>>()?;
            if masked.iter().all(|(_, m)| m.positions.is_empty()) {
                // Force one prediction so every batch with maskable tokens
                // contributes a defined loss.
                let forced = masked.iter_mut().find_map(|(i, m)| {
                    maskable_positions(&sequences[*i]).first().map(|&p| (m, p))
                });
                let Some((m, p)) = forced else {
                    continue; // no maskable token anywhere in this batch
                };
                let original = m.ids[p];
                m.positions.push(p);
                m.labels.push(original);
                m.ids[p] = roll_corruption(original, &config.mlm, vocab_size, &mut masking_rng)?;
            }

            let mut tape = Tape::new();
            let vars = model.encoder.bind(&mut tape)?;
            let token_t = tape.transpose(vars.token)?;
            let mut losses = Vec::new();
            for (i, m) in &masked {
                if m.positions.is_empty() {
                    continue;
                }
                let seq = &sequences[*i];
                let corrupted = TokenSequence {
                    ids: m.ids.clone(),
                    attention_mask: seq.attention_mask.clone(),
                    true_length: seq.true_length,
                };
                let trace = encoder_forward(
                    &mut tape,
                    &vars,
                    &corrupted,
                    &model.config,
                    true,
                    Some(&mut dropout_rng),
                )?;
                let logits =
                    mlm_logits(&mut tape, trace.hidden, token_t, vars.mlm_bias, &m.positions)?;
                losses.push(tape.cross_entropy(logits, &m.labels)?);
            }
            if losses.is_empty() {
                continue;
            }
            let batch_loss = mean_of(&mut tape, &losses)?;
            tape.backward(batch_loss)?;
            for (var, param) in vars.ordered().iter().zip(model.encoder.params_mut()) {
                if let Some(g) = tape.grad(*var) {
                    param.accumulate_grad(g)?;
                }
            }
            adam.step(model.encoder.params_mut())?;
            loss_sum += Scalar::to_f64(tape.value(batch_loss).item()) * losses.len() as f64;
            examples += losses.len();
        }
        if examples == 0 {
            return Err(Error::Data(
                "no MLM positions were selected in an entire epoch".into(),
            ));
        }
        let train_loss = loss_sum / examples as f64;
        let mut probe_rng = root.substream(&format!("probe-{epoch}"));
        let probe = mlm_probe(model, sequences, config.mlm.mask_prob, &mut probe_rng)?;
        let val_loss = probe.loss;
        let val_accuracy = probe.recovery_rate();
        eprintln!(
            "epoch={epoch} train_loss={train_loss:.6} val_loss={val_loss:.6} val_acc={val_accuracy:.4}"
        );
        curve.push(CurveRow {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        })?;
    }
    Ok(curve)
}

/// Clean and encode raw records against a vocabulary.
fn encode_records(
    records: &[RawTweetRecord],
    vocab: &Vocabulary,
    clean: &CleanConfig,
    max_len: usize,
) -> Result<Vec<(TokenSequence, usize)>> {
    records
        .iter()
        .map(|r| {
            let cleaned = preprocess::preprocess_text(&r.text, clean);
            Ok((tokenizer::encode(&cleaned, vocab, max_len)?, r.label))
        })
        .collect()
}

/// Eval-mode loss and prediction for one encoded example.
fn eval_example(model: &Model<f32>, seq: &TokenSequence, label: usize) -> Result<(f64, usize)> {
    let logits = model.logits(seq)?;
    let row = logits.as_slice();
    if label >= row.len() {
        return Err(Error::Data(format!(
            "label {label} out of range for {} classes",
            row.len()
        )));
    }
    Ok((row_cross_entropy(row, label), argmax(row)))
}

/// Mean eval-mode loss and accuracy over encoded pairs.
fn eval_pairs(model: &Model<f32>, pairs: &[(TokenSequence, usize)]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (seq, label) in pairs {
        let (l, pred) = eval_example(model, seq, *label)?;
        loss += l;
        correct += usize::from(pred == *label);
    }
    let n = pairs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Whether `patience` consecutive epochs have passed without improvement.
fn should_stop(best_epoch: usize, current_epoch: usize, patience: Option<usize>) -> bool {
    match patience {
        Some(p) => current_epoch - best_epoch > p,
        None => false,
    }
}

/// Result of fine-tuning: the best-validation-loss model, the full curve,
/// and the epoch that produced the retained weights.
#[derive(Debug)]
pub struct FinetuneOutcome {
    pub model: Model<f32>,
    pub curve: TrainingCurve,
    pub best_epoch: usize,
}

/// Supervised fine-tuning: minibatch cross-entropy over the classifier
/// head and encoder, Adam updates, eval-mode validation each epoch, and
/// best-validation-loss checkpoint retention. When the bundle has no
/// validation split, validation metrics are computed on the training set
/// (still in eval mode).
pub fn finetune(
    model: Model<f32>,
    bundle: &DatasetBundle,
    vocab: &Vocabulary,
    clean: &CleanConfig,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if bundle.num_classes != model.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model head has {}",
            bundle.num_classes, model.config.num_classes
        )));
    }
    if vocab.size() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.size(),
            model.config.vocab_size
        )));
    }
    if bundle.train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let train = encode_records(&bundle.train, vocab, clean, model.config.max_len)?;
    let validation = encode_records(&bundle.validation, vocab, clean, model.config.max_len)?;

    let root = Prng::new(config.seed);
    let mut shuffle_rng = root.substream("shuffling");
    let mut dropout_rng = root.substream("dropout");
    let mut adam_encoder = AdamState::with_lr(config.learning_rate)?;
    let mut adam_head = AdamState::with_lr(config.learning_rate)?;

    let mut model = model;
    let mut curve = TrainingCurve::new();
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape)?;
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let (seq, label) = &train[i];
                let trace = encoder_forward(
                    &mut tape,
                    &vars.encoder,
                    seq,
                    &model.config,
                    true,
                    Some(&mut dropout_rng),
                )?;
                let pooled = pool(&mut tape, trace.hidden, &seq.attention_mask, model.config.pooling)?;
                let logits = classify(&mut tape, pooled, &vars.head)?;
                losses.push(tape.cross_entropy(logits, &[*label])?);
            }
            let batch_loss = mean_of(&mut tape, &losses)?;
            tape.backward(batch_loss)?;
            model.harvest_grads(&tape, &vars)?;
            adam_encoder.step(model.encoder.params_mut())?;
            adam_head.step(model.head.params_mut())?;
            loss_sum += Scalar::to_f64(tape.value(batch_loss).item()) * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let eval_set: &[(TokenSequence, usize)] = if validation.is_empty() {
            &train
        } else {
            &validation
        };
        let (val_loss, val_accuracy) = eval_pairs(&model, eval_set)?;
        eprintln!(
            "epoch={epoch} train_loss={train_loss:.6} val_loss={val_loss:.6} val_acc={val_accuracy:.4}"
        );
        curve.push(CurveRow {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        })?;

        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, model.clone()));
        }
        let best_epoch = best.as_ref().map(|(_, e, _)| *e).unwrap_or(epoch);
        if should_stop(best_epoch, epoch, config.early_stop_patience) {
            break;
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(FinetuneOutcome {
        model: best_model,
        curve,
        best_epoch,
    })
}

/// Full-pipeline evaluation: clean, encode, classify every record, then
/// delegate to the metrics module. Emoji glyphs from the mapping are
/// attached to the per-class rows.
pub fn evaluate(
    model: &Model<f32>,
    vocab: &Vocabulary,
    mapping: &LabelMapping,
    records: &[RawTweetRecord],
    clean: &CleanConfig,
) -> Result<MetricsReport> {
    let c = model.config.num_classes;
    let mut preds = Vec::with_capacity(records.len());
    let mut golds = Vec::with_capacity(records.len());
    for r in records {
        if r.label >= c {
            return Err(Error::Data(format!(
                "record label {} out of range for {c} classes",
                r.label
            )));
        }
        preds.push(predict_emoji(&r.text, model, vocab, mapping, clean)?.label);
        golds.push(r.label);
    }
    let matrix = metrics::confusion(&preds, &golds, c)?;
    let mut report = metrics::report(&matrix)?;
    report.attach_emoji(&mapping.emoji_list());
    Ok(report)
}
