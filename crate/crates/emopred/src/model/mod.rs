//! The mini bidirectional transformer encoder and its classification head.
//!
//! Architecture, from the bottom up: learned token + absolute position
//! embeddings plus a single constant segment embedding (single-sentence
//! inputs only), a stack of post-norm encoder layers (multi-head
//! self-attention, then a GELU feed-forward sandwich, each followed by
//! residual + layer-norm), one pooling stage (mean over unmasked positions
//! by default, CLS row as the alternative), and a tapering three-dense-layer
//! head H -> ceil(H/2) -> C with GELU between the affine layers.
//!
//! Padding is handled entirely through the attention mask: PAD columns
//! receive a [`MASK_BIAS`] additive bias before the softmax, which drives
//! their probability to exactly zero, so logits are invariant to how far a
//! sequence is padded. The masked-language-model output projection is tied
//! to the token embedding matrix (plus a free bias), as in the original
//! bidirectional-encoder recipe.
//!
//! Everything here builds on [`Tape`] graphs, so the same code path serves
//! 32-bit training and 64-bit gradient verification.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::data::LabelMapping;
use crate::error::{Error, Result};
use crate::numeric::{Parameter, Prng, Scalar, Tape, Tensor, Var, MASK_BIAS};
use crate::preprocess::{self, CleanConfig};
use crate::tokenizer::{self, TokenSequence, Vocabulary};

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};

/// Stabilizer added to the per-row variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Standard deviation of the truncated-Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;
/// Truncation bound for weight initialization, in standard deviations.
pub const INIT_TRUNC: f64 = 2.0;

/// Parameter tensors per encoder layer: four attention projections, two
/// feed-forward matrices, and two layer-norm gain/bias pairs.
const PER_LAYER: usize = 10;
/// Parameter tensors before the layer stack: token, position, and segment
/// embeddings.
const EMBEDDING_TENSORS: usize = 3;

/// How per-token hidden states are reduced to one sentence vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Arithmetic mean over unmasked positions (the default).
    Mean,
    /// Row 0, the CLS position.
    Cls,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Cls => "cls",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "cls" => Ok(Pooling::Cls),
            other => Err(Error::Config(format!(
                "unknown pooling mode {other:?} (expected \"mean\" or \"cls\")"
            ))),
        }
    }
}

/// Hyperparameters fixing every tensor shape in the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ff_size: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub pooling: Pooling,
}

impl ModelConfig {
    /// The default desk-scale configuration; the architecture rather than
    /// the scale is what this crate exercises.
    pub fn desk_default(vocab_size: usize, num_classes: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            hidden_size: 128,
            num_heads: 4,
            ff_size: 512,
            max_len: 64,
            vocab_size,
            num_classes,
            dropout: 0.1,
            pooling: Pooling::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        if self.hidden_size == 0 || self.num_heads == 0 {
            return Err(Error::Config(
                "hidden_size and num_heads must be positive".into(),
            ));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config(format!(
                "max_len {} cannot hold CLS, SEP, and a token",
                self.max_len
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes {} leaves nothing to classify",
                self.num_classes
            )));
        }
        if self.ff_size < self.hidden_size {
            return Err(Error::Config(format!(
                "ff_size {} is smaller than hidden_size {}",
                self.ff_size, self.hidden_size
            )));
        }
        if self.vocab_size < tokenizer::FIRST_REGULAR_ID {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the special tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Per-head width H / A.
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    /// Width of the middle dense layer, ceil(H / 2).
    pub fn head_mid(&self) -> usize {
        self.hidden_size.div_ceil(2)
    }

    /// Closed-form total parameter count:
    /// `VH + max_len*H + H + L(4H^2 + 2HF + 4H) + V` for the encoder plus
    /// `H^2 + H + H*m + m + m*C + C` for the head, with m = ceil(H/2).
    pub fn param_count(&self) -> usize {
        let (l, h, f) = (self.num_layers, self.hidden_size, self.ff_size);
        let (v, c, m) = (self.vocab_size, self.num_classes, self.head_mid());
        let encoder = v * h + self.max_len * h + h + l * (4 * h * h + 2 * h * f + 4 * h) + v;
        let head = h * h + h + h * m + m + m * c + c;
        encoder + head
    }
}

/// Every tensor in the model, in serialization order: name and shape.
/// This list is the single source of truth shared by initialization and
/// the checkpoint manifest.
pub(crate) fn tensor_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (h, f) = (config.hidden_size, config.ff_size);
    let v = config.vocab_size;
    let mut out = vec![
        ("encoder.embeddings.token".to_string(), vec![v, h]),
        ("encoder.embeddings.position".to_string(), vec![config.max_len, h]),
        ("encoder.embeddings.segment".to_string(), vec![1, h]),
    ];
    for i in 0..config.num_layers {
        let p = format!("encoder.layers.{i}");
        out.push((format!("{p}.attention.query"), vec![h, h]));
        out.push((format!("{p}.attention.key"), vec![h, h]));
        out.push((format!("{p}.attention.value"), vec![h, h]));
        out.push((format!("{p}.attention.output"), vec![h, h]));
        out.push((format!("{p}.norm1.gain"), vec![h]));
        out.push((format!("{p}.norm1.bias"), vec![h]));
        out.push((format!("{p}.ff.in"), vec![h, f]));
        out.push((format!("{p}.ff.out"), vec![f, h]));
        out.push((format!("{p}.norm2.gain"), vec![h]));
        out.push((format!("{p}.norm2.bias"), vec![h]));
    }
    out.push(("encoder.mlm.bias".to_string(), vec![v]));
    let m = config.head_mid();
    let c = config.num_classes;
    out.push(("head.dense1.weight".to_string(), vec![h, h]));
    out.push(("head.dense1.bias".to_string(), vec![h]));
    out.push(("head.dense2.weight".to_string(), vec![h, m]));
    out.push(("head.dense2.bias".to_string(), vec![m]));
    out.push(("head.dense3.weight".to_string(), vec![m, c]));
    out.push(("head.dense3.bias".to_string(), vec![c]));
    out
}

/// Number of leading layout entries that belong to the encoder.
fn encoder_tensor_count(config: &ModelConfig) -> usize {
    EMBEDDING_TENSORS + config.num_layers * PER_LAYER + 1
}

/// Embeddings, layer stack, and tied-MLM bias of the encoder.
#[derive(Clone, Debug)]
pub struct EncoderParams<F: Scalar> {
    params: Vec<Parameter<F>>,
}

/// The three affine layers of the classification head.
#[derive(Clone, Debug)]
pub struct ClassifierHead<F: Scalar> {
    params: Vec<Parameter<F>>,
}

/// A full model: configuration, encoder parameters, classifier head.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub encoder: EncoderParams<F>,
    pub head: ClassifierHead<F>,
}

/// Tape handles for one encoder layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub output: Var,
    pub norm1_gain: Var,
    pub norm1_bias: Var,
    pub ff_in: Var,
    pub ff_out: Var,
    pub norm2_gain: Var,
    pub norm2_bias: Var,
}

/// Tape handles for all encoder parameters, in serialization order.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub token: Var,
    pub position: Var,
    pub segment: Var,
    pub layers: Vec<LayerVars>,
    pub mlm_bias: Var,
}

/// Tape handles for the classifier head parameters.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub dense1_weight: Var,
    pub dense1_bias: Var,
    pub dense2_weight: Var,
    pub dense2_bias: Var,
    pub dense3_weight: Var,
    pub dense3_bias: Var,
}

/// Tape handles for the whole model.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub head: HeadVars,
}

impl<F: Scalar> EncoderParams<F> {
    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        (self.params.len() - EMBEDDING_TENSORS - 1) / PER_LAYER
    }

    fn leaf(&self, tape: &mut Tape<F>, index: usize) -> Result<Var> {
        tape.leaf(self.params[index].value.clone())
    }

    /// Register every parameter as a tape leaf, in serialization order.
    pub fn bind(&self, tape: &mut Tape<F>) -> Result<EncoderVars> {
        let token = self.leaf(tape, 0)?;
        let position = self.leaf(tape, 1)?;
        let segment = self.leaf(tape, 2)?;
        let mut layers = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let b = EMBEDDING_TENSORS + l * PER_LAYER;
            layers.push(LayerVars {
                query: self.leaf(tape, b)?,
                key: self.leaf(tape, b + 1)?,
                value: self.leaf(tape, b + 2)?,
                output: self.leaf(tape, b + 3)?,
                norm1_gain: self.leaf(tape, b + 4)?,
                norm1_bias: self.leaf(tape, b + 5)?,
                ff_in: self.leaf(tape, b + 6)?,
                ff_out: self.leaf(tape, b + 7)?,
                norm2_gain: self.leaf(tape, b + 8)?,
                norm2_bias: self.leaf(tape, b + 9)?,
            });
        }
        let mlm_bias = self.leaf(tape, self.params.len() - 1)?;
        Ok(EncoderVars {
            token,
            position,
            segment,
            layers,
            mlm_bias,
        })
    }
}

impl<F: Scalar> ClassifierHead<F> {
    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> Result<HeadVars> {
        let mut leaf = |i: usize| tape.leaf(self.params[i].value.clone());
        Ok(HeadVars {
            dense1_weight: leaf(0)?,
            dense1_bias: leaf(1)?,
            dense2_weight: leaf(2)?,
            dense2_bias: leaf(3)?,
            dense3_weight: leaf(4)?,
            dense3_bias: leaf(5)?,
        })
    }
}

impl EncoderVars {
    /// Vars in the same order as [`EncoderParams::params`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.token, self.position, self.segment];
        for l in &self.layers {
            out.extend([
                l.query,
                l.key,
                l.value,
                l.output,
                l.norm1_gain,
                l.norm1_bias,
                l.ff_in,
                l.ff_out,
                l.norm2_gain,
                l.norm2_bias,
            ]);
        }
        out.push(self.mlm_bias);
        out
    }
}

impl HeadVars {
    /// Vars in the same order as [`ClassifierHead::params`].
    pub fn ordered(&self) -> Vec<Var> {
        vec![
            self.dense1_weight,
            self.dense1_bias,
            self.dense2_weight,
            self.dense2_bias,
            self.dense3_weight,
            self.dense3_bias,
        ]
    }
}

impl ModelVars {
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = self.encoder.ordered();
        out.extend(self.head.ordered());
        out
    }
}

impl<F: Scalar> Model<F> {
    /// Fresh model with truncated-Gaussian weights (sigma [`INIT_STD`],
    /// cut at [`INIT_TRUNC`] sigma), zero biases, and unit layer-norm gains.
    /// Draws from `rng` in serialization order, so initialization is a pure
    /// function of the seed and the configuration.
    pub fn init(config: ModelConfig, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let params = tensor_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with(".gain") {
                    Tensor::filled(&shape, F::one())
                } else if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::randn_truncated(&shape, INIT_STD, INIT_TRUNC, rng)
                };
                Parameter::new(name, value)
            })
            .collect();
        Model::from_parts(config, params)
    }

    /// Assemble a model from parameters already in serialization order,
    /// verifying names and shapes against the canonical layout.
    pub(crate) fn from_parts(config: ModelConfig, params: Vec<Parameter<F>>) -> Result<Self> {
        config.validate()?;
        let layout = tensor_layout(&config);
        if params.len() != layout.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (p, (name, shape)) in params.iter().zip(&layout) {
            if p.name != *name || p.value.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {:?} with shape {:?} does not match layout entry {:?} {:?}",
                    p.name,
                    p.value.shape(),
                    name,
                    shape
                )));
            }
        }
        let mut params = params;
        let head = params.split_off(encoder_tensor_count(&config));
        Ok(Model {
            config,
            encoder: EncoderParams { params },
            head: ClassifierHead { params: head },
        })
    }

    /// Total number of scalar weights; equals
    /// [`ModelConfig::param_count`] by construction.
    pub fn param_count(&self) -> usize {
        self.encoder
            .params
            .iter()
            .chain(&self.head.params)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Register all parameters on a tape.
    pub fn bind(&self, tape: &mut Tape<F>) -> Result<ModelVars> {
        Ok(ModelVars {
            encoder: self.encoder.bind(tape)?,
            head: self.head.bind(tape)?,
        })
    }

    /// Add the gradients recorded on `tape` into this model's parameter
    /// gradient accumulators. `vars` must come from [`Model::bind`] on that
    /// same tape, after [`Tape::backward`].
    pub fn harvest_grads(&mut self, tape: &Tape<F>, vars: &ModelVars) -> Result<()> {
        let enc = vars.encoder.ordered();
        for (var, param) in enc.iter().zip(self.encoder.params.iter_mut()) {
            if let Some(g) = tape.grad(*var) {
                param.accumulate_grad(g)?;
            }
        }
        for (var, param) in vars.head.ordered().iter().zip(self.head.params.iter_mut()) {
            if let Some(g) = tape.grad(*var) {
                param.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Eval-mode hidden states for one sequence, shape [n, H].
    pub fn hidden_states(&self, seq: &TokenSequence) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let vars = self.encoder.bind(&mut tape)?;
        let trace = encoder_forward(&mut tape, &vars, seq, &self.config, false, None)?;
        Ok(tape.value(trace.hidden).clone())
    }

    /// Eval-mode class logits for one sequence, shape [1, C].
    pub fn logits(&self, seq: &TokenSequence) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape)?;
        let trace = encoder_forward(&mut tape, &vars.encoder, seq, &self.config, false, None)?;
        let pooled = pool(&mut tape, trace.hidden, &seq.attention_mask, self.config.pooling)?;
        let logits = classify(&mut tape, pooled, &vars.head)?;
        Ok(tape.value(logits).clone())
    }
}

/// Output of one multi-head attention block: the projected context plus the
/// per-head attention probability matrices (for inspection and tests).
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub head_probs: Vec<Var>,
}

/// Result of a full encoder pass: final hidden states [n, H] and the
/// attention probabilities of every layer and head, layer-major.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub hidden: Var,
    pub attention_probs: Vec<Var>,
}

/// Additive pre-softmax column bias for an attention mask: 0 on real
/// positions, [`MASK_BIAS`] on padding.
fn attention_bias<F: Scalar>(attention_mask: &[u8]) -> Result<Tensor<F>> {
    Tensor::from_vec(
        &[attention_mask.len()],
        attention_mask
            .iter()
            .map(|&m| {
                if m != 0 {
                    F::zero()
                } else {
                    F::from_f64(MASK_BIAS)
                }
            })
            .collect(),
    )
}

fn maybe_dropout<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    config: &ModelConfig,
    train_mode: bool,
    rng: &mut Option<&mut Prng>,
) -> Result<Var> {
    if !train_mode || config.dropout == 0.0 {
        return Ok(x);
    }
    let rng = rng.as_deref_mut().ok_or_else(|| {
        Error::Config("train-mode forward with dropout requires an RNG".into())
    })?;
    tape.dropout(x, config.dropout, rng)
}

/// Multi-head self-attention over `x` [n, H]: per-head scaled dot-product
/// scores, masked softmax (PAD columns get exactly zero probability), head
/// concatenation, and the output projection.
pub fn multi_head_attention<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    attention_mask: &[u8],
    layer: &LayerVars,
    num_heads: usize,
) -> Result<AttentionOutput> {
    let (n, h) = {
        let xv = tape.value(x);
        (xv.rows(), xv.cols())
    };
    if attention_mask.len() != n {
        return Err(Error::Shape(format!(
            "attention mask of length {} for {n} positions",
            attention_mask.len()
        )));
    }
    if num_heads == 0 || h % num_heads != 0 {
        return Err(Error::Config(format!(
            "hidden size {h} is not divisible into {num_heads} heads"
        )));
    }
    let head_dim = h / num_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let bias = attention_bias::<F>(attention_mask)?;

    let q = tape.matmul(x, layer.query)?;
    let k = tape.matmul(x, layer.key)?;
    let v = tape.matmul(x, layer.value)?;

    let mut heads = Vec::with_capacity(num_heads);
    let mut head_probs = Vec::with_capacity(num_heads);
    for a in 0..num_heads {
        let qa = tape.slice_cols(q, a * head_dim, head_dim)?;
        let ka = tape.slice_cols(k, a * head_dim, head_dim)?;
        let va = tape.slice_cols(v, a * head_dim, head_dim)?;
        let ka_t = tape.transpose(ka)?;
        let scores = tape.matmul(qa, ka_t)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.softmax_rows_masked(scores, &bias)?;
        head_probs.push(probs);
        heads.push(tape.matmul(probs, va)?);
    }
    let context = tape.concat_cols(&heads)?;
    let output = tape.matmul(context, layer.output)?;
    Ok(AttentionOutput { output, head_probs })
}

/// One post-norm encoder layer: attention + residual + layer-norm, then the
/// GELU feed-forward sandwich + residual + layer-norm.
fn encoder_layer<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    attention_mask: &[u8],
    layer: &LayerVars,
    config: &ModelConfig,
    train_mode: bool,
    rng: &mut Option<&mut Prng>,
) -> Result<(Var, Vec<Var>)> {
    let attn = multi_head_attention(tape, x, attention_mask, layer, config.num_heads)?;
    let a = maybe_dropout(tape, attn.output, config, train_mode, rng)?;
    let res = tape.add(x, a)?;
    let h = tape.layer_norm(res, layer.norm1_gain, layer.norm1_bias, LAYER_NORM_EPS)?;

    let ff = tape.matmul(h, layer.ff_in)?;
    let ff = tape.gelu(ff)?;
    let ff = tape.matmul(ff, layer.ff_out)?;
    let ff = maybe_dropout(tape, ff, config, train_mode, rng)?;
    let res = tape.add(h, ff)?;
    let out = tape.layer_norm(res, layer.norm2_gain, layer.norm2_bias, LAYER_NORM_EPS)?;
    Ok((out, attn.head_probs))
}

/// Full encoder pass over one tokenized sequence. The sequence may be
/// shorter than `config.max_len`; PAD positions are never attended to, so
/// the returned non-PAD hidden rows do not depend on the padded length.
///
/// `rng` is only consulted when `train_mode` is set and dropout is active.
pub fn encoder_forward<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    seq: &TokenSequence,
    config: &ModelConfig,
    train_mode: bool,
    mut rng: Option<&mut Prng>,
) -> Result<ForwardTrace> {
    let n = seq.ids.len();
    if n == 0 || n > config.max_len {
        return Err(Error::Shape(format!(
            "sequence of length {n} for max_len {}",
            config.max_len
        )));
    }
    if seq.attention_mask.len() != n {
        return Err(Error::Shape(format!(
            "attention mask of length {} for {n} ids",
            seq.attention_mask.len()
        )));
    }
    if let Some(&bad) = seq.ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::Data(format!(
            "token id {bad} out of range for vocabulary size {}",
            config.vocab_size
        )));
    }
    if seq.attention_mask.iter().all(|&m| m == 0) {
        return Err(Error::Data("sequence with every position masked".into()));
    }

    let token = tape.gather_rows(vars.token, &seq.ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let position = tape.gather_rows(vars.position, &positions)?;
    let mut h = tape.add(token, position)?;
    h = tape.add_bias_row(h, vars.segment)?;
    h = maybe_dropout(tape, h, config, train_mode, &mut rng)?;

    let mut attention_probs = Vec::with_capacity(config.num_layers * config.num_heads);
    for layer in &vars.layers {
        let (next, probs) = encoder_layer(
            tape,
            h,
            &seq.attention_mask,
            layer,
            config,
            train_mode,
            &mut rng,
        )?;
        attention_probs.extend(probs);
        h = next;
    }
    Ok(ForwardTrace {
        hidden: h,
        attention_probs,
    })
}

/// Reduce hidden states [n, H] to a sentence vector [1, H].
pub fn pool<F: Scalar>(
    tape: &mut Tape<F>,
    hidden: Var,
    attention_mask: &[u8],
    mode: Pooling,
) -> Result<Var> {
    match mode {
        Pooling::Mean => {
            let mask: Vec<bool> = attention_mask.iter().map(|&m| m != 0).collect();
            tape.masked_mean_rows(hidden, &mask)
        }
        Pooling::Cls => {
            if attention_mask.first().copied().unwrap_or(0) == 0 {
                return Err(Error::Data("CLS position is masked".into()));
            }
            tape.gather_rows(hidden, &[0])
        }
    }
}

/// The three-dense-layer head: affine, GELU, affine, GELU, affine.
pub fn classify<F: Scalar>(tape: &mut Tape<F>, pooled: Var, head: &HeadVars) -> Result<Var> {
    let h = tape.matmul(pooled, head.dense1_weight)?;
    let h = tape.add_bias_row(h, head.dense1_bias)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, head.dense2_weight)?;
    let h = tape.add_bias_row(h, head.dense2_bias)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, head.dense3_weight)?;
    tape.add_bias_row(h, head.dense3_bias)
}

/// Vocabulary logits [P, V] for the hidden rows at `positions`, through the
/// tied token-embedding projection plus the MLM bias.
///
/// `token_transposed` must be `tape.transpose(vars.token)`; callers build it
/// once per tape so batched pretraining pays for one transpose per step.
pub fn mlm_logits<F: Scalar>(
    tape: &mut Tape<F>,
    hidden: Var,
    token_transposed: Var,
    mlm_bias: Var,
    positions: &[usize],
) -> Result<Var> {
    if positions.is_empty() {
        return Err(Error::Data("MLM logits over zero positions".into()));
    }
    let rows = tape.gather_rows(hidden, positions)?;
    let logits = tape.matmul(rows, token_transposed)?;
    tape.add_bias_row(logits, mlm_bias)
}

/// One classified tweet: label id, emoji glyph, and the full softmax
/// distribution over classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub emoji: String,
    pub probabilities: Vec<f64>,
}

/// Numerically stable softmax of a logit slice.
fn softmax_probs<F: Scalar>(logits: &[F]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|&v| Scalar::to_f64(v))
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&v| (Scalar::to_f64(v) - max).exp())
        .collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Full inference pipeline for one raw tweet: clean, encode, forward, pool,
/// classify, softmax. Ties in the argmax resolve to the lowest label id.
pub fn predict_emoji<F: Scalar>(
    text: &str,
    model: &Model<F>,
    vocab: &Vocabulary,
    mapping: &LabelMapping,
    clean: &CleanConfig,
) -> Result<Prediction> {
    if vocab.size() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.size(),
            model.config.vocab_size
        )));
    }
    if mapping.num_classes() != model.config.num_classes {
        return Err(Error::Config(format!(
            "label mapping has {} classes but the checkpoint expects {}",
            mapping.num_classes(),
            model.config.num_classes
        )));
    }
    let cleaned = preprocess::preprocess_text(text, clean);
    let seq = tokenizer::encode(&cleaned, vocab, model.config.max_len)?;
    let logits = model.logits(&seq)?;
    let probabilities = softmax_probs(logits.as_slice());
    let label = probabilities
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let emoji = mapping
        .emoji(label)
        .ok_or_else(|| Error::Data(format!("label {label} missing from the mapping")))?
        .to_string();
    Ok(Prediction {
        label,
        emoji,
        probabilities,
    })
}

/// Combined classification + MLM loss over a single sequence, used by
/// gradient verification so that every parameter tensor (including the
/// tied-projection bias) receives a nonzero gradient.
///
/// Returns the tape, the bound variables (ordered like the model's
/// parameters), and the scalar loss var; the caller decides whether to run
/// backward or just read the value.
pub fn verification_loss<F: Scalar>(
    model: &Model<F>,
    seq: &TokenSequence,
    label: usize,
    mlm_positions: &[usize],
    mlm_labels: &[usize],
) -> Result<(Tape<F>, ModelVars, Var)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape)?;
    let trace = encoder_forward(&mut tape, &vars.encoder, seq, &model.config, false, None)?;
    let pooled = pool(&mut tape, trace.hidden, &seq.attention_mask, model.config.pooling)?;
    let logits = classify(&mut tape, pooled, &vars.head)?;
    let cls_loss = tape.cross_entropy(logits, &[label])?;
    let token_t = tape.transpose(vars.encoder.token)?;
    let mlm = mlm_logits(
        &mut tape,
        trace.hidden,
        token_t,
        vars.encoder.mlm_bias,
        mlm_positions,
    )?;
    let mlm_loss = tape.cross_entropy(mlm, mlm_labels)?;
    let loss = tape.add(cls_loss, mlm_loss)?;
    Ok((tape, vars, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::grad_check;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            hidden_size: 8,
            num_heads: 2,
            ff_size: 8,
            max_len: 6,
            vocab_size: 12,
            num_classes: 3,
            dropout: 0.0,
            pooling: Pooling::Mean,
        }
    }

    fn seq(ids: &[usize], real: usize) -> TokenSequence {
        TokenSequence {
            ids: ids.to_vec(),
            attention_mask: (0..ids.len()).map(|i| u8::from(i < real)).collect(),
            true_length: real,
        }
    }

    #[test]
    fn config_validation_catches_each_violation() {
        let good = tiny_config();
        assert!(good.validate().is_ok());
        for f in [
            (|c: &mut ModelConfig| c.num_heads = 3) as fn(&mut ModelConfig),
            |c| c.num_layers = 0,
            |c| c.max_len = 2,
            |c| c.num_classes = 1,
            |c| c.ff_size = 4,
            |c| c.vocab_size = 4,
            |c| c.dropout = 1.0,
        ] {
            let mut bad = tiny_config();
            f(&mut bad);
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn pooling_parses_and_prints() {
        assert_eq!("mean".parse::<Pooling>().unwrap(), Pooling::Mean);
        assert_eq!("cls".parse::<Pooling>().unwrap(), Pooling::Cls);
        assert_eq!(Pooling::Mean.to_string(), "mean");
        assert_eq!(Pooling::Cls.to_string(), "cls");
        assert!("max".parse::<Pooling>().is_err());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let config = ModelConfig {
            num_layers: 2,
            hidden_size: 128,
            num_heads: 4,
            ff_size: 512,
            max_len: 64,
            vocab_size: 1000,
            num_classes: 5,
            dropout: 0.1,
            pooling: Pooling::Mean,
        };
        let mut rng = Prng::new(7).substream("init");
        let model = Model::<f32>::init(config.clone(), &mut rng).unwrap();
        // Written out once by hand so the formula and the construction are
        // checked against each other.
        let encoder = 1000 * 128            // token embedding
            + 64 * 128                      // position embedding
            + 128                           // segment embedding
            + 2 * (4 * 128 * 128            // q/k/v/o projections
                + 2 * 128 * 512             // feed-forward in/out
                + 4 * 128)                  // two layer-norm gain/bias pairs
            + 1000; // MLM bias
        let head = 128 * 128 + 128 + 128 * 64 + 64 + 64 * 5 + 5;
        assert_eq!(model.param_count(), encoder + head);
        assert_eq!(config.param_count(), encoder + head);
        assert_eq!(encoder + head, 556_653);
    }

    #[test]
    fn init_respects_weight_rules() {
        let mut rng = Prng::new(11).substream("init");
        let model = Model::<f32>::init(tiny_config(), &mut rng).unwrap();
        let bound = (INIT_STD * INIT_TRUNC) as f32 + 1e-9;
        let mut saw_nonzero_weight = false;
        for p in model.encoder.params().iter().chain(model.head.params()) {
            if p.name.ends_with(".gain") {
                assert!(p.value.as_slice().iter().all(|&v| v == 1.0), "{}", p.name);
            } else if p.name.ends_with(".bias") {
                assert!(p.value.as_slice().iter().all(|&v| v == 0.0), "{}", p.name);
            } else {
                assert!(
                    p.value.as_slice().iter().all(|&v| v.abs() <= bound),
                    "{} exceeds the truncation bound",
                    p.name
                );
                saw_nonzero_weight |= p.value.as_slice().iter().any(|&v| v != 0.0);
            }
        }
        assert!(saw_nonzero_weight);
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        let a = Model::<f32>::init(tiny_config(), &mut Prng::new(3).substream("init")).unwrap();
        let b = Model::<f32>::init(tiny_config(), &mut Prng::new(3).substream("init")).unwrap();
        for (pa, pb) in a.encoder.params().iter().zip(b.encoder.params()) {
            assert_eq!(pa.value.as_slice(), pb.value.as_slice(), "{}", pa.name);
        }
    }

    #[test]
    fn single_head_attention_matches_directly_coded_path() {
        // A = 1: the module must reduce to plain scaled dot-product
        // attention, recomputed here with raw tensor algebra.
        let mut rng = Prng::new(5).substream("test");
        let h = 4;
        let x = Tensor::<f64>::randn_truncated(&[3, h], 1.0, 3.0, &mut rng);
        let wq = Tensor::<f64>::randn_truncated(&[h, h], 0.5, 3.0, &mut rng);
        let wk = Tensor::<f64>::randn_truncated(&[h, h], 0.5, 3.0, &mut rng);
        let wv = Tensor::<f64>::randn_truncated(&[h, h], 0.5, 3.0, &mut rng);
        let wo = Tensor::<f64>::randn_truncated(&[h, h], 0.5, 3.0, &mut rng);
        let mask = [1u8, 1, 0];

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let layer = LayerVars {
            query: tape.leaf(wq.clone()).unwrap(),
            key: tape.leaf(wk.clone()).unwrap(),
            value: tape.leaf(wv.clone()).unwrap(),
            output: tape.leaf(wo.clone()).unwrap(),
            norm1_gain: xv,
            norm1_bias: xv,
            ff_in: xv,
            ff_out: xv,
            norm2_gain: xv,
            norm2_bias: xv,
        };
        let got = multi_head_attention(&mut tape, xv, &mask, &layer, 1).unwrap();

        // Direct path.
        let q = x.matmul(&wq).unwrap();
        let k = x.matmul(&wk).unwrap();
        let v = x.matmul(&wv).unwrap();
        let scale = 1.0 / (h as f64).sqrt();
        let scores = q.matmul(&k.transpose().unwrap()).unwrap().scale(scale);
        let mut probs = vec![0.0; 9];
        for i in 0..3 {
            let row = scores.row(i);
            let mut exps = [0.0; 3];
            let mut denom = 0.0;
            for j in 0..3 {
                exps[j] = if mask[j] != 0 {
                    (row[j] - row[0].max(row[1])).exp()
                } else {
                    0.0
                };
                denom += exps[j];
            }
            for j in 0..3 {
                probs[i * 3 + j] = exps[j] / denom;
            }
        }
        let probs = Tensor::from_vec(&[3, 3], probs).unwrap();
        let expected = probs.matmul(&v).unwrap().matmul(&wo).unwrap();

        let out = tape.value(got.output);
        for (a, b) in out.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_query_and_key_give_uniform_attention_over_unmasked() {
        let h = 4;
        let mut tape = Tape::<f64>::new();
        let mut rng = Prng::new(9).substream("test");
        let x = tape
            .leaf(Tensor::randn_truncated(&[4, h], 1.0, 3.0, &mut rng))
            .unwrap();
        let zero = tape.leaf(Tensor::zeros(&[h, h])).unwrap();
        let wv = tape
            .leaf(Tensor::randn_truncated(&[h, h], 0.5, 3.0, &mut rng))
            .unwrap();
        let layer = LayerVars {
            query: zero,
            key: zero,
            value: wv,
            output: wv,
            norm1_gain: x,
            norm1_bias: x,
            ff_in: x,
            ff_out: x,
            norm2_gain: x,
            norm2_bias: x,
        };
        let mask = [1u8, 1, 1, 0];
        let got = multi_head_attention(&mut tape, x, &mask, &layer, 2).unwrap();
        for &p in &got.head_probs {
            let probs = tape.value(p);
            for i in 0..4 {
                let row = probs.row(i);
                for j in 0..3 {
                    assert!((row[j] - 1.0 / 3.0).abs() < 1e-12);
                }
                assert_eq!(row[3], 0.0);
            }
        }
    }

    #[test]
    fn hand_sized_attention_matches_softmax_of_gram_matrix() {
        // seq = 2, H = 2, A = 1, identity projections: the attention matrix
        // is exactly softmax(x . x^T / sqrt(2)).
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        let eye = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let id = tape.leaf(eye).unwrap();
        let layer = LayerVars {
            query: id,
            key: id,
            value: id,
            output: id,
            norm1_gain: xv,
            norm1_bias: xv,
            ff_in: xv,
            ff_out: xv,
            norm2_gain: xv,
            norm2_bias: xv,
        };
        let got = multi_head_attention(&mut tape, xv, &[1, 1], &layer, 1).unwrap();

        // Gram matrix x.x^T = [[5, 2], [2, 1]], scaled by 1/sqrt(2).
        let s = 1.0 / 2.0_f64.sqrt();
        let expect_row = |a: f64, b: f64| {
            let (ea, eb) = ((a * s).exp(), (b * s).exp());
            [ea / (ea + eb), eb / (ea + eb)]
        };
        let expected = [expect_row(5.0, 2.0), expect_row(2.0, 1.0)];
        let probs = tape.value(got.head_probs[0]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((probs.row(i)[j] - expected[i][j]).abs() < 1e-12);
            }
        }
        // Output = probs . x (identity value/output projections).
        let expected_out = probs.matmul(&x).unwrap();
        let out = tape.value(got.output);
        for (a, b) in out.as_slice().iter().zip(expected_out.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_columns_get_exactly_zero_attention_in_every_layer_and_head() {
        let config = ModelConfig {
            num_layers: 2,
            hidden_size: 8,
            num_heads: 2,
            ff_size: 16,
            max_len: 8,
            vocab_size: 12,
            num_classes: 3,
            dropout: 0.0,
            pooling: Pooling::Mean,
        };
        let mut rng = Prng::new(21).substream("init");
        let model = Model::<f32>::init(config.clone(), &mut rng).unwrap();
        let s = seq(&[2, 5, 6, 7, 3, 0, 0, 0], 5);
        let mut tape = Tape::new();
        let vars = model.encoder.bind(&mut tape).unwrap();
        let trace = encoder_forward(&mut tape, &vars, &s, &config, false, None).unwrap();
        assert_eq!(trace.attention_probs.len(), 4);
        for &p in &trace.attention_probs {
            let probs = tape.value(p);
            for i in 0..8 {
                let row = probs.row(i);
                let sum: f32 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                for j in 5..8 {
                    assert!(row[j].abs() < 1e-7, "mass {} on PAD column {j}", row[j]);
                }
            }
        }
    }

    #[test]
    fn padded_length_does_not_change_hidden_rows_or_logits() {
        let config = ModelConfig {
            num_layers: 2,
            hidden_size: 16,
            num_heads: 2,
            ff_size: 32,
            max_len: 12,
            vocab_size: 10,
            num_classes: 3,
            dropout: 0.0,
            pooling: Pooling::Mean,
        };
        let mut rng = Prng::new(33).substream("init");
        let model = Model::<f32>::init(config, &mut rng).unwrap();
        let short = seq(&[2, 5, 6, 7, 8, 3, 0, 0], 6);
        let long = seq(&[2, 5, 6, 7, 8, 3, 0, 0, 0, 0, 0, 0], 6);

        let ha = model.hidden_states(&short).unwrap();
        let hb = model.hidden_states(&long).unwrap();
        for i in 0..6 {
            for (a, b) in ha.row(i).iter().zip(hb.row(i)) {
                assert!((a - b).abs() < 1e-5, "row {i}: {a} vs {b}");
            }
        }

        let la = model.logits(&short).unwrap();
        let lb = model.logits(&long).unwrap();
        for (a, b) in la.as_slice().iter().zip(lb.as_slice()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn cls_pooling_ignores_padded_length_too() {
        let mut config = tiny_config();
        config.pooling = Pooling::Cls;
        let mut rng = Prng::new(34).substream("init");
        let model = Model::<f32>::init(config, &mut rng).unwrap();
        let la = model.logits(&seq(&[2, 5, 3, 0], 3)).unwrap();
        let lb = model.logits(&seq(&[2, 5, 3, 0, 0, 0], 3)).unwrap();
        for (a, b) in la.as_slice().iter().zip(lb.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn pool_mean_and_cls_do_the_expected_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let hidden = tape
            .leaf(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let mean = pool(&mut tape, hidden, &[1, 1], Pooling::Mean).unwrap();
        assert_eq!(tape.value(mean).as_slice(), &[0.5, 0.5]);
        let cls = pool(&mut tape, hidden, &[1, 1], Pooling::Cls).unwrap();
        assert_eq!(tape.value(cls).as_slice(), &[1.0, 0.0]);

        // A single unmasked row: both modes coincide when it is row 0.
        let single = pool(&mut tape, hidden, &[1, 0], Pooling::Mean).unwrap();
        assert_eq!(tape.value(single).as_slice(), &[1.0, 0.0]);

        assert!(pool(&mut tape, hidden, &[0, 0], Pooling::Mean).is_err());
        assert!(pool(&mut tape, hidden, &[0, 1], Pooling::Cls).is_err());
    }

    #[test]
    fn zero_head_produces_zero_logits() {
        let mut rng = Prng::new(13).substream("init");
        let mut model = Model::<f32>::init(tiny_config(), &mut rng).unwrap();
        for p in model.head.params_mut() {
            p.value.fill(0.0);
        }
        let logits = model.logits(&seq(&[2, 5, 3, 0], 3)).unwrap();
        assert_eq!(logits.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn classify_matches_hand_computed_chain() {
        // H = 2, mid = 1, C = 2 with hand-picked weights; expectation
        // recomputed with scalar arithmetic.
        fn gelu_ref(x: f64) -> f64 {
            let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + inner.tanh())
        }
        let mut tape = Tape::<f64>::new();
        let pooled = tape
            .leaf(Tensor::from_vec(&[1, 2], vec![0.3, 0.7]).unwrap())
            .unwrap();
        let head = HeadVars {
            dense1_weight: tape
                .leaf(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
                .unwrap(),
            dense1_bias: tape
                .leaf(Tensor::from_vec(&[2], vec![0.1, -0.1]).unwrap())
                .unwrap(),
            dense2_weight: tape
                .leaf(Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap())
                .unwrap(),
            dense2_bias: tape.leaf(Tensor::from_vec(&[1], vec![0.2]).unwrap()).unwrap(),
            dense3_weight: tape
                .leaf(Tensor::from_vec(&[1, 2], vec![2.0, -1.0]).unwrap())
                .unwrap(),
            dense3_bias: tape
                .leaf(Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap())
                .unwrap(),
        };
        let logits = classify(&mut tape, pooled, &head).unwrap();

        let h1 = [gelu_ref(0.3 + 0.1), gelu_ref(0.7 - 0.1)];
        let h2 = gelu_ref(h1[0] + h1[1] + 0.2);
        let expected = [2.0 * h2 + 0.5, -h2 - 0.5];
        for (a, b) in tape.value(logits).as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn tiny_encoder_passes_the_finite_difference_gradient_check() {
        let config = tiny_config();
        let mut rng = Prng::new(17).substream("init");
        let mut model = Model::<f64>::init(config.clone(), &mut rng).unwrap();
        let s = seq(&[2, 5, 6, 7, 3, 0], 5);
        let (label, mlm_positions, mlm_labels) = (1, vec![1usize, 3], vec![6usize, 9]);

        let (mut tape, vars, loss) =
            verification_loss(&model, &s, label, &mlm_positions, &mlm_labels).unwrap();
        tape.backward(loss).unwrap();
        model.harvest_grads(&tape, &vars).unwrap();

        let values: Vec<Tensor<f64>> = model
            .encoder
            .params()
            .iter()
            .chain(model.head.params())
            .map(|p| p.value.clone())
            .collect();
        let grads: Vec<Tensor<f64>> = model
            .encoder
            .params()
            .iter()
            .chain(model.head.params())
            .map(|p| p.grad.clone())
            .collect();
        let names: Vec<String> = model
            .encoder
            .params()
            .iter()
            .chain(model.head.params())
            .map(|p| p.name.clone())
            .collect();

        let config2 = config.clone();
        let s2 = s.clone();
        let loss_fn = |vals: &[Tensor<f64>]| -> Result<f64> {
            let params = names
                .iter()
                .zip(vals)
                .map(|(n, v)| Parameter::new(n.clone(), v.clone()))
                .collect();
            let m = Model::from_parts(config2.clone(), params)?;
            let (tape, _, loss) =
                verification_loss(&m, &s2, label, &mlm_positions, &mlm_labels)?;
            Ok(tape.value(loss).item())
        };
        let mut sample_rng = Prng::new(17).substream("grad-check");
        let report = grad_check(&values, &grads, loss_fn, 1e-5, 8, &mut sample_rng).unwrap();
        assert!(
            report.max_rel_err < 1e-3,
            "max relative error {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn forward_rejects_bad_sequences() {
        let config = tiny_config();
        let mut rng = Prng::new(2).substream("init");
        let model = Model::<f32>::init(config, &mut rng).unwrap();
        // Too long for max_len = 6.
        assert!(model.logits(&seq(&[2, 5, 5, 5, 5, 5, 3], 7)).is_err());
        // Token id out of vocabulary range.
        assert!(model.logits(&seq(&[2, 50, 3], 3)).is_err());
        // Every position masked.
        assert!(model.logits(&seq(&[2, 5, 3], 0)).is_err());
    }

    #[test]
    fn train_mode_with_dropout_requires_an_rng() {
        let mut config = tiny_config();
        config.dropout = 0.5;
        let mut rng = Prng::new(4).substream("init");
        let model = Model::<f32>::init(config.clone(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let vars = model.encoder.bind(&mut tape).unwrap();
        let s = seq(&[2, 5, 3], 3);
        assert!(matches!(
            encoder_forward(&mut tape, &vars, &s, &config, true, None),
            Err(Error::Config(_))
        ));
        let mut dropout_rng = Prng::new(4).substream("dropout");
        let mut tape = Tape::new();
        let vars = model.encoder.bind(&mut tape).unwrap();
        assert!(
            encoder_forward(&mut tape, &vars, &s, &config, true, Some(&mut dropout_rng)).is_ok()
        );
    }

    #[test]
    fn predictions_are_deterministic_and_normalized() {
        let corpus = ["love this day", "love that"];
        let vocab = tokenizer::build_vocab(&corpus, 1, 100).unwrap();
        let mapping = LabelMapping::new(vec![
            "\u{2764}".into(),
            "\u{1F602}".into(),
            "\u{1F60D}".into(),
        ])
        .unwrap();
        let mut config = tiny_config();
        config.vocab_size = vocab.size();
        let mut rng = Prng::new(77).substream("init");
        let model = Model::<f32>::init(config, &mut rng).unwrap();
        let clean = CleanConfig {
            lowercase: true,
            strip_punctuation: true,
            keep_hashtags: true,
            keep_mentions: true,
            enable_stemming: false,
            collapse_whitespace: true,
        };
        let a = predict_emoji("Love this day!", &model, &vocab, &mapping, &clean).unwrap();
        let b = predict_emoji("Love this day!", &model, &vocab, &mapping, &clean).unwrap();
        assert_eq!(a, b);
        let total: f64 = a.probabilities.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert_eq!(a.probabilities.len(), 3);
        assert_eq!(a.emoji, mapping.emoji(a.label).unwrap());
    }

    #[test]
    fn prediction_rejects_mismatched_artifacts() {
        let corpus = ["one two three"];
        let vocab = tokenizer::build_vocab(&corpus, 1, 100).unwrap();
        let mapping =
            LabelMapping::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let clean = CleanConfig {
            lowercase: true,
            strip_punctuation: true,
            keep_hashtags: true,
            keep_mentions: true,
            enable_stemming: false,
            collapse_whitespace: true,
        };
        // Vocabulary size differs from the checkpoint's V.
        let mut rng = Prng::new(1).substream("init");
        let model = Model::<f32>::init(tiny_config(), &mut rng).unwrap();
        assert!(matches!(
            predict_emoji("hi", &model, &vocab, &mapping, &clean),
            Err(Error::Config(_))
        ));
        // Mapping class count differs from the checkpoint's C.
        let mut config = tiny_config();
        config.vocab_size = vocab.size();
        config.num_classes = 4;
        let mut rng = Prng::new(1).substream("init");
        let model = Model::<f32>::init(config, &mut rng).unwrap();
        assert!(matches!(
            predict_emoji("hi", &model, &vocab, &mapping, &clean),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_text_still_predicts() {
        let corpus = ["some words"];
        let vocab = tokenizer::build_vocab(&corpus, 1, 100).unwrap();
        let mapping = LabelMapping::new(vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let mut config = tiny_config();
        config.vocab_size = vocab.size();
        let mut rng = Prng::new(6).substream("init");
        let model = Model::<f32>::init(config, &mut rng).unwrap();
        let clean = CleanConfig {
            lowercase: true,
            strip_punctuation: true,
            keep_hashtags: true,
            keep_mentions: true,
            enable_stemming: false,
            collapse_whitespace: true,
        };
        let p = predict_emoji("", &model, &vocab, &mapping, &clean).unwrap();
        assert!(p.label < 3);
    }

    #[test]
    fn mlm_logits_shape_and_bias_wiring() {
        let config = tiny_config();
        let mut rng = Prng::new(19).substream("init");
        let model = Model::<f64>::init(config.clone(), &mut rng).unwrap();
        let s = seq(&[2, 5, 6, 3, 0, 0], 4);
        let mut tape = Tape::new();
        let vars = model.encoder.bind(&mut tape).unwrap();
        let trace = encoder_forward(&mut tape, &vars, &s, &config, false, None).unwrap();
        let token_t = tape.transpose(vars.token).unwrap();
        let logits = mlm_logits(&mut tape, trace.hidden, token_t, vars.mlm_bias, &[1, 2]).unwrap();
        assert_eq!(tape.value(logits).shape(), &[2, config.vocab_size]);
        assert!(mlm_logits(&mut tape, trace.hidden, token_t, vars.mlm_bias, &[]).is_err());
    }
}
