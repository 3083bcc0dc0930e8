//! `emopred` — command-line front end for the emoji prediction pipeline.
//!
//! Each subcommand is a thin wrapper over the library: it resolves its
//! configuration (flag > config file > built-in default), runs the wrapped
//! operation, writes its artifacts, and finishes by writing a RunManifest
//! that records every input hash, the fully resolved configuration, and the
//! seed — enough to re-execute the run exactly. Progress goes to standard
//! error; standard output carries only machine-readable results (TSV for
//! predict, JSON for evaluate/baseline).

use std::fmt::Write as _;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use emopred::baseline::{eval_baseline, featurize, train_logreg};
use emopred::data::{self, CsvSchema, DatasetBundle, LabelMapping, RawTweetRecord};
use emopred::model::{
    load_checkpoint, predict_emoji, save_checkpoint, Model, ModelConfig, Pooling,
};
use emopred::numeric::Prng;
use emopred::preprocess::{preprocess_corpus, CleanConfig};
use emopred::tokenizer::{self, build_vocab, Vocabulary};
use emopred::training::{self, export_curve, finetune, load_curve, pretrain_mlm, TrainConfig};
use emopred::{Error, Result};

#[derive(Parser)]
#[command(name = "emopred", version, about = "Emoji prediction from tweet text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess, build a vocabulary, optionally MLM-pretrain, fine-tune,
    /// and evaluate; writes checkpoint, vocabulary, curves, metrics.
    Train(TrainArgs),
    /// Masked-language-model pretraining only; writes checkpoint,
    /// vocabulary, and the pretraining curve.
    Pretrain(PretrainArgs),
    /// Score an existing checkpoint against a labeled test CSV.
    Evaluate(EvaluateArgs),
    /// Predict emoji for tweets read from a file or standard input.
    Predict(PredictArgs),
    /// Train and score the bag-of-words logistic-regression baseline.
    Baseline(BaselineArgs),
    /// Validate and re-export the curve CSVs of a finished run.
    ExportCurves(ExportCurvesArgs),
}

/// Where the input CSVs live and how to parse them.
#[derive(Args)]
struct DataArgs {
    /// Training CSV in the headerless `text,label` layout.
    #[arg(long, value_name = "CSV", conflicts_with = "dataset2")]
    dataset1: Option<PathBuf>,
    /// Training CSV with a header row (see --text-col/--label-col/--id-col).
    #[arg(long, value_name = "CSV")]
    dataset2: Option<PathBuf>,
    /// Test CSV in the same layout as the training file.
    #[arg(long, value_name = "CSV")]
    test: PathBuf,
    /// Label-to-emoji mapping CSV.
    #[arg(long, value_name = "CSV")]
    mapping: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
}

/// Column names used by the header layout.
#[derive(Args)]
struct ColumnArgs {
    #[arg(long, value_name = "NAME", default_value = "TEXT")]
    text_col: String,
    #[arg(long, value_name = "NAME", default_value = "Label")]
    label_col: String,
    #[arg(long, value_name = "NAME")]
    id_col: Option<String>,
}

impl DataArgs {
    fn train_path(&self) -> Result<&Path> {
        match (&self.dataset1, &self.dataset2) {
            (Some(p), None) => Ok(p),
            (None, Some(p)) => Ok(p),
            _ => Err(Error::Config(
                "exactly one of --dataset1 or --dataset2 is required".into(),
            )),
        }
    }

    fn schema(&self) -> CsvSchema {
        if self.dataset2.is_some() {
            self.columns.header_schema()
        } else {
            CsvSchema::Positional
        }
    }
}

impl ColumnArgs {
    fn header_schema(&self) -> CsvSchema {
        CsvSchema::Header {
            text: self.text_col.clone(),
            label: self.label_col.clone(),
            id: self.id_col.clone(),
        }
    }
}

/// Text-cleaning switches plus the config file that can also set them.
/// The boolean flags take an optional explicit value (`--stem`,
/// `--stem false`), so a config-file setting can be overridden either way
/// from the command line.
#[derive(Args)]
struct CleanArgs {
    /// JSON config file supplying any tunable setting.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Apply Porter stemming during preprocessing.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    stem: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    lowercase: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    strip_punctuation: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    keep_hashtags: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    keep_mentions: Option<bool>,
}

impl CleanArgs {
    fn resolve(&self, file: &FileConfig) -> CleanConfig {
        CleanConfig {
            lowercase: resolve(self.lowercase, file.lowercase, true),
            strip_punctuation: resolve(self.strip_punctuation, file.strip_punctuation, true),
            keep_hashtags: resolve(self.keep_hashtags, file.keep_hashtags, true),
            keep_mentions: resolve(self.keep_mentions, file.keep_mentions, true),
            enable_stemming: resolve(self.stem, file.stem, false),
            collapse_whitespace: true,
        }
    }

    /// Clean config alone, for the commands with no other tunables.
    fn resolve_standalone(&self) -> Result<CleanConfig> {
        Ok(self.resolve(&FileConfig::load(self.config.as_deref())?))
    }
}

/// Tunables shared by every training-shaped command. All optional: the
/// effective value is flag > config file > built-in default.
#[derive(Args)]
struct TuningArgs {
    #[command(flatten)]
    clean: CleanArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_name = "RATE")]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of the training set carved out for validation (0 disables).
    #[arg(long, value_name = "FRACTION")]
    val_split: Option<f64>,
    /// Early stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
    /// MLM pretraining epochs before fine-tuning (0 skips pretraining).
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long, value_name = "PROB")]
    mask_prob: Option<f64>,
    #[arg(long)]
    min_freq: Option<usize>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Sentence pooling: "mean" or "cls".
    #[arg(long)]
    pooling: Option<Pooling>,
}

/// Config-file counterpart of [`TuningArgs`] plus baseline extras.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    val_split: Option<f64>,
    patience: Option<usize>,
    pretrain_epochs: Option<usize>,
    mask_prob: Option<f64>,
    min_freq: Option<usize>,
    max_vocab: Option<usize>,
    layers: Option<usize>,
    hidden_size: Option<usize>,
    heads: Option<usize>,
    ff_size: Option<usize>,
    max_len: Option<usize>,
    dropout: Option<f64>,
    pooling: Option<Pooling>,
    stem: Option<bool>,
    lowercase: Option<bool>,
    strip_punctuation: Option<bool>,
    keep_hashtags: Option<bool>,
    keep_mentions: Option<bool>,
    binary: Option<bool>,
    l2: Option<f64>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&content)
            .map_err(|e| Error::Schema(format!("config file {path:?}: {e}")))
    }
}

/// Everything a run needs, fully resolved; echoed into the manifest.
#[derive(Serialize, Clone)]
struct Resolved {
    clean: CleanConfig,
    min_freq: usize,
    max_vocab: usize,
    model: ResolvedModel,
    train: TrainConfig,
    val_split: f64,
    pretrain_epochs: usize,
}

/// Model settings before the data-dependent fields (vocabulary size, class
/// count) are known.
#[derive(Serialize, Clone)]
struct ResolvedModel {
    layers: usize,
    hidden_size: usize,
    heads: usize,
    ff_size: usize,
    max_len: usize,
    dropout: f64,
    pooling: Pooling,
}

impl ResolvedModel {
    fn with_data(&self, vocab_size: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.layers,
            hidden_size: self.hidden_size,
            num_heads: self.heads,
            ff_size: self.ff_size,
            max_len: self.max_len,
            vocab_size,
            num_classes,
            dropout: self.dropout,
            pooling: self.pooling,
        }
    }
}

fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

impl TuningArgs {
    fn resolve(&self) -> Result<Resolved> {
        let file = FileConfig::load(self.clean.config.as_deref())?;
        let desk = ModelConfig::desk_default(1000, 5);
        let train_default = TrainConfig::default();
        let mut train = TrainConfig {
            epochs: resolve(self.epochs, file.epochs, train_default.epochs),
            batch_size: resolve(self.batch_size, file.batch_size, train_default.batch_size),
            learning_rate: resolve(self.lr, file.lr, train_default.learning_rate),
            seed: resolve(self.seed, file.seed, train_default.seed),
            early_stop_patience: self.patience.or(file.patience),
            mlm: train_default.mlm,
        };
        train.mlm.mask_prob = resolve(self.mask_prob, file.mask_prob, train.mlm.mask_prob);
        let resolved = Resolved {
            clean: self.clean.resolve(&file),
            min_freq: resolve(self.min_freq, file.min_freq, 1),
            max_vocab: resolve(self.max_vocab, file.max_vocab, 1000),
            model: ResolvedModel {
                layers: resolve(self.layers, file.layers, desk.num_layers),
                hidden_size: resolve(self.hidden_size, file.hidden_size, desk.hidden_size),
                heads: resolve(self.heads, file.heads, desk.num_heads),
                ff_size: resolve(self.ff_size, file.ff_size, desk.ff_size),
                max_len: resolve(self.max_len, file.max_len, desk.max_len),
                dropout: resolve(self.dropout, file.dropout, desk.dropout),
                pooling: resolve(self.pooling, file.pooling, desk.pooling),
            },
            train,
            val_split: resolve(self.val_split, file.val_split, 0.1),
            pretrain_epochs: resolve(self.pretrain_epochs, file.pretrain_epochs, 0),
        };
        Ok(resolved)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output directory for all artifacts.
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Corpus CSV in the headerless `text,label` layout.
    #[arg(long, value_name = "CSV", conflicts_with = "dataset2")]
    dataset1: Option<PathBuf>,
    /// Corpus CSV with a header row.
    #[arg(long, value_name = "CSV")]
    dataset2: Option<PathBuf>,
    #[command(flatten)]
    columns: ColumnArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    #[arg(long, value_name = "CSV")]
    mapping: PathBuf,
    /// Labeled test CSV (headerless layout unless --header is set).
    #[arg(long, value_name = "CSV")]
    test: PathBuf,
    /// Parse the test CSV by header row instead of position.
    #[arg(long)]
    header: bool,
    #[command(flatten)]
    columns: ColumnArgs,
    #[command(flatten)]
    clean: CleanArgs,
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    #[arg(long, value_name = "CSV")]
    mapping: PathBuf,
    /// Tweets to predict, one per line (standard input when omitted).
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Unique ids, one per line, keying the output rows (dataset-2 style).
    #[arg(long, value_name = "FILE")]
    ids: Option<PathBuf>,
    #[command(flatten)]
    clean: CleanArgs,
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Use presence indicators instead of counts.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    binary: Option<bool>,
    /// L2 penalty on the weight matrix.
    #[arg(long, value_name = "PENALTY")]
    l2: Option<f64>,
    /// Transformer metrics JSON to inline for a side-by-side report.
    #[arg(long, value_name = "JSON")]
    transformer_metrics: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportCurvesArgs {
    /// Directory of a finished run containing curve CSVs.
    #[arg(long, value_name = "DIR")]
    run: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "run-export")]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Run manifests

#[derive(Serialize)]
struct ManifestInput {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    tool_version: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<ManifestInput>,
    artifacts: Vec<String>,
    wall_seconds: f64,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

fn manifest_inputs(paths: &[&Path]) -> Result<Vec<ManifestInput>> {
    paths
        .iter()
        .map(|p| {
            Ok(ManifestInput {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Serialize and atomically write the manifest (temp file + rename), so a
/// manifest on disk is always complete.
fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    let tmp = out_dir.join("manifest.json.tmp");
    let path = out_dir.join("manifest.json");
    std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn config_json<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    serde_json::to_value(value).map_err(|e| Error::Data(format!("config serialization: {e}")))
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces

struct LoadedData {
    train: Vec<RawTweetRecord>,
    test: Vec<RawTweetRecord>,
    mapping: LabelMapping,
}

fn load_labeled(args: &DataArgs) -> Result<LoadedData> {
    let mapping = data::load_mapping(&args.mapping)?;
    let classes = Some(mapping.num_classes());
    let schema = args.schema();
    let train = data::load_dataset_csv(args.train_path()?, &schema, classes)?;
    let test = data::load_dataset_csv(&args.test, &schema, classes)?;
    for (name, report) in [("train", &train.report), ("test", &test.report)] {
        if report.rows_dropped > 0 {
            eprintln!(
                "{name}: kept {} of {} rows ({:?})",
                report.rows_kept, report.rows_read, report.reasons
            );
        }
    }
    Ok(LoadedData {
        train: train.records,
        test: test.records,
        mapping,
    })
}

fn clean_records(
    records: Vec<RawTweetRecord>,
    clean: &CleanConfig,
    what: &str,
) -> Vec<RawTweetRecord> {
    let cleaned = preprocess_corpus(records, clean);
    if cleaned.dropped_empty > 0 {
        eprintln!(
            "{what}: dropped {} records that cleaned to empty text",
            cleaned.dropped_empty
        );
    }
    cleaned.records
}

fn save_metrics(report: &emopred::metrics::MetricsReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let resolved = args.tuning.resolve()?;
    ensure_out_dir(&args.out)?;
    let loaded = load_labeled(&args.data)?;
    let num_classes = loaded.mapping.num_classes();

    let train = clean_records(loaded.train, &resolved.clean, "train");
    let test = clean_records(loaded.test, &resolved.clean, "test");
    let texts: Vec<&str> = train.iter().map(|r| r.text.as_str()).collect();
    let vocab = build_vocab(&texts, resolved.min_freq, resolved.max_vocab)?;
    eprintln!("vocabulary: {} entries", vocab.size());

    let model_config = resolved.model.with_data(vocab.size(), num_classes);
    let mut rng = Prng::new(resolved.train.seed).substream("init");
    let mut model = Model::<f32>::init(model_config, &mut rng)?;

    let mut artifacts = Vec::new();
    if resolved.pretrain_epochs > 0 {
        eprintln!("pretraining for {} epochs", resolved.pretrain_epochs);
        let sequences = train
            .iter()
            .map(|r| tokenizer::encode(&r.text, &vocab, model.config.max_len))
            .collect::<Result<Vec<_>>>()?;
        let pretrain_config = TrainConfig {
            epochs: resolved.pretrain_epochs,
            ..resolved.train.clone()
        };
        let curve = pretrain_mlm(&mut model, &sequences, &pretrain_config)?;
        let path = args.out.join("pretrain_curve.csv");
        export_curve(&curve, &path)?;
        artifacts.push(path);
    }

    let val_split = (resolved.val_split > 0.0).then_some((resolved.val_split, resolved.train.seed));
    let bundle = DatasetBundle::assemble(train, test, loaded.mapping, val_split)?;
    let outcome = finetune(model, &bundle, &vocab, &resolved.clean, &resolved.train)?;
    eprintln!("best epoch: {}", outcome.best_epoch);

    let mut report = training::evaluate(
        &outcome.model,
        &vocab,
        &bundle.mapping,
        &bundle.test,
        &resolved.clean,
    )?;
    report.set_split_hash(sha256_file(&args.data.test)?);
    eprintln!(
        "test accuracy {:.4} (majority-class floor {:.4})",
        report.accuracy, report.header.majority_class_accuracy
    );

    let vocab_path = args.out.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let ckpt_path = args.out.join("model.ckpt");
    save_checkpoint(&outcome.model, &vocab.sha256(), &ckpt_path)?;
    let curve_path = args.out.join("curve.csv");
    export_curve(&outcome.curve, &curve_path)?;
    let metrics_path = args.out.join("metrics.json");
    save_metrics(&report, &metrics_path)?;
    artifacts.extend([vocab_path, ckpt_path, curve_path, metrics_path]);

    let train_path = args.data.train_path()?.to_path_buf();
    write_manifest(
        &args.out,
        &RunManifest {
            command: "train".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: resolved.train.seed,
            config: with_substreams(config_json(&resolved)?),
            inputs: manifest_inputs(&[&train_path, &args.data.test, &args.data.mapping])?,
            artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )
}

/// Log the named PRNG substreams fanned out from the seed, so a manifest
/// documents where every random draw comes from.
fn with_substreams(mut config: serde_json::Value) -> serde_json::Value {
    config["rng_substreams"] =
        serde_json::json!(["init", "masking", "shuffling", "dropout", "probe-{epoch}"]);
    config
}

fn cmd_pretrain(args: &PretrainArgs) -> Result<()> {
    let start = Instant::now();
    let resolved = args.tuning.resolve()?;
    ensure_out_dir(&args.out)?;
    let (path, schema) = match (&args.dataset1, &args.dataset2) {
        (Some(p), None) => (p, CsvSchema::Positional),
        (None, Some(p)) => (p, args.columns.header_schema()),
        _ => {
            return Err(Error::Config(
                "exactly one of --dataset1 or --dataset2 is required".into(),
            ))
        }
    };
    let records = data::load_dataset_csv(path, &schema, None)?.records;
    let corpus = clean_records(records, &resolved.clean, "corpus");
    let texts: Vec<&str> = corpus.iter().map(|r| r.text.as_str()).collect();
    let vocab = build_vocab(&texts, resolved.min_freq, resolved.max_vocab)?;

    // The class count only sizes the (untrained) classifier head; emoji
    // classes are unknown during pretraining, so the desk default stands.
    let model_config = resolved.model.with_data(vocab.size(), 5);
    let mut rng = Prng::new(resolved.train.seed).substream("init");
    let mut model = Model::<f32>::init(model_config, &mut rng)?;
    let sequences = corpus
        .iter()
        .map(|r| tokenizer::encode(&r.text, &vocab, model.config.max_len))
        .collect::<Result<Vec<_>>>()?;
    let epochs = if resolved.pretrain_epochs > 0 {
        resolved.pretrain_epochs
    } else {
        resolved.train.epochs
    };
    let config = TrainConfig {
        epochs,
        ..resolved.train.clone()
    };
    let curve = pretrain_mlm(&mut model, &sequences, &config)?;

    let vocab_path = args.out.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let ckpt_path = args.out.join("model.ckpt");
    save_checkpoint(&model, &vocab.sha256(), &ckpt_path)?;
    let curve_path = args.out.join("pretrain_curve.csv");
    export_curve(&curve, &curve_path)?;

    write_manifest(
        &args.out,
        &RunManifest {
            command: "pretrain".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: with_substreams(config_json(&resolved)?),
            inputs: manifest_inputs(&[path])?,
            artifacts: [vocab_path, ckpt_path, curve_path]
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let clean = args.clean.resolve_standalone()?;
    ensure_out_dir(&args.out)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    checkpoint.verify_vocab(&vocab)?;
    let mapping = data::load_mapping(&args.mapping)?;
    let schema = if args.header {
        args.columns.header_schema()
    } else {
        CsvSchema::Positional
    };
    let records =
        data::load_dataset_csv(&args.test, &schema, Some(mapping.num_classes()))?.records;
    let records = clean_records(records, &clean, "test");

    let mut report = training::evaluate(&checkpoint.model, &vocab, &mapping, &records, &clean)?;
    report.set_split_hash(sha256_file(&args.test)?);
    let json = report.to_json()?;
    println!("{json}");

    let metrics_path = args.out.join("metrics.json");
    std::fs::write(&metrics_path, &json).map_err(|e| Error::io(&metrics_path, e))?;
    write_manifest(
        &args.out,
        &RunManifest {
            command: "evaluate".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            // Inference-only commands draw no random numbers.
            seed: 0,
            config: serde_json::json!({ "clean": config_json(&clean)? }),
            inputs: manifest_inputs(&[&args.checkpoint, &args.vocab, &args.mapping, &args.test])?,
            artifacts: vec![metrics_path.display().to_string()],
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let start = Instant::now();
    let clean = args.clean.resolve_standalone()?;
    ensure_out_dir(&args.out)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    checkpoint.verify_vocab(&vocab)?;
    let mapping = data::load_mapping(&args.mapping)?;

    let text_input = match &args.input {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| Error::io("<stdin>", e))?;
            buf
        }
    };
    let lines: Vec<&str> = text_input.lines().collect();

    let ids: Option<Vec<String>> = match &args.ids {
        Some(path) => {
            let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let ids: Vec<String> = content.lines().map(str::to_string).collect();
            if ids.len() != lines.len() {
                return Err(Error::Data(format!(
                    "{} ids for {} input lines",
                    ids.len(),
                    lines.len()
                )));
            }
            Some(ids)
        }
        None => None,
    };

    let mut out = String::new();
    let id_header = if ids.is_some() { "id\t" } else { "" };
    let _ = writeln!(out, "{id_header}text\tlabel\temoji\ttop3");
    for (i, line) in lines.iter().enumerate() {
        let p = predict_emoji(line, &checkpoint.model, &vocab, &mapping, &clean)?;
        let mut ranked: Vec<(usize, f64)> =
            p.probabilities.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let top3 = ranked
            .iter()
            .take(3)
            .map(|(label, prob)| format!("{label}:{prob:.6}"))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(ids) = &ids {
            let _ = write!(out, "{}\t", ids[i]);
        }
        let _ = writeln!(out, "{line}\t{}\t{}\t{top3}", p.label, p.emoji);
    }
    print!("{out}");

    let mut inputs = vec![
        args.checkpoint.as_path(),
        args.vocab.as_path(),
        args.mapping.as_path(),
    ];
    if let Some(p) = &args.input {
        inputs.push(p);
    }
    if let Some(p) = &args.ids {
        inputs.push(p);
    }
    write_manifest(
        &args.out,
        &RunManifest {
            command: "predict".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: 0,
            config: serde_json::json!({ "clean": config_json(&clean)? }),
            inputs: manifest_inputs(&inputs)?,
            artifacts: Vec::new(),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )
}

fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let start = Instant::now();
    let resolved = args.tuning.resolve()?;
    let file = FileConfig::load(args.tuning.clean.config.as_deref())?;
    let binary = resolve(args.binary, file.binary, false);
    let l2 = resolve(args.l2, file.l2, 1e-4);
    // The baseline converges in a few hundred full-batch steps; the
    // transformer's default epoch count is not a sensible default here.
    let epochs = resolve(args.tuning.epochs, file.epochs, 300);
    let lr = resolve(args.tuning.lr, file.lr, 0.05);
    ensure_out_dir(&args.out)?;

    let loaded = load_labeled(&args.data)?;
    let num_classes = loaded.mapping.num_classes();
    let train = clean_records(loaded.train, &resolved.clean, "train");
    let test = clean_records(loaded.test, &resolved.clean, "test");
    let texts: Vec<&str> = train.iter().map(|r| r.text.as_str()).collect();
    let vocab = build_vocab(&texts, resolved.min_freq, resolved.max_vocab)?;

    let features = featurize(&train, &vocab, binary)?;
    let model = train_logreg(&features, num_classes, epochs, lr, l2)?;
    let train_preds = model.predict(&features);
    let train_acc = train_preds
        .iter()
        .zip(&features.labels)
        .filter(|(p, g)| p == g)
        .count() as f64
        / features.labels.len() as f64;
    eprintln!("baseline train accuracy {train_acc:.4}");

    let mut report = eval_baseline(&model, &test, &vocab)?;
    report.attach_emoji(&loaded.mapping.emoji_list());
    report.set_split_hash(sha256_file(&args.data.test)?);

    let transformer: Option<serde_json::Value> = match &args.transformer_metrics {
        Some(path) => {
            let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(
                serde_json::from_str(&content)
                    .map_err(|e| Error::Schema(format!("transformer metrics {path:?}: {e}")))?,
            )
        }
        None => None,
    };
    let side_by_side = serde_json::json!({
        "baseline": serde_json::from_str::<serde_json::Value>(&report.to_json()?)
            .expect("round trip of our own JSON"),
        "transformer": transformer,
    });
    let json = serde_json::to_string_pretty(&side_by_side)
        .map_err(|e| Error::Data(format!("report serialization: {e}")))?;
    println!("{json}");

    let metrics_path = args.out.join("baseline_metrics.json");
    std::fs::write(&metrics_path, &json).map_err(|e| Error::io(&metrics_path, e))?;

    let mut config = config_json(&resolved)?;
    config["baseline"] = serde_json::json!({
        "binary": binary, "l2": l2, "epochs": epochs, "lr": lr,
    });
    let train_path = args.data.train_path()?.to_path_buf();
    let mut inputs = vec![
        train_path.as_path(),
        args.data.test.as_path(),
        args.data.mapping.as_path(),
    ];
    if let Some(p) = &args.transformer_metrics {
        inputs.push(p);
    }
    write_manifest(
        &args.out,
        &RunManifest {
            command: "baseline".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: resolved.train.seed,
            config,
            inputs: manifest_inputs(&inputs)?,
            artifacts: vec![metrics_path.display().to_string()],
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )
}

fn cmd_export_curves(args: &ExportCurvesArgs) -> Result<()> {
    let start = Instant::now();
    ensure_out_dir(&args.out)?;
    let entries = std::fs::read_dir(&args.run).map_err(|e| Error::io(&args.run, e))?;
    let mut csvs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(Error::Data(format!(
            "no curve CSVs found in {:?}",
            args.run
        )));
    }

    let mut inputs = Vec::new();
    let mut artifacts = Vec::new();
    for path in &csvs {
        let curve = load_curve(path)?;
        let name = path.file_name().expect("read_dir entries have names");
        let dest = args.out.join(name);
        export_curve(&curve, &dest)?;
        println!("{}\t{}", dest.display(), curve.len());
        inputs.push(path.as_path());
        artifacts.push(dest.display().to_string());
    }
    write_manifest(
        &args.out,
        &RunManifest {
            command: "export-curves".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: 0,
            config: serde_json::json!({}),
            inputs: manifest_inputs(&inputs)?,
            artifacts,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )
}

/// Exit codes: 0 success, 2 usage/input error, 3 data-validation error,
/// 4 numeric failure.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Data(_) => 3,
        Error::Shape(_) | Error::NonFinite(_) => 4,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::ExportCurves(args) => cmd_export_curves(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
