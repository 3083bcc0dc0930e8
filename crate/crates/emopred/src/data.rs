//! Dataset loading, label-mapping validation, and reproducible splits.
//!
//! Tweets arrive as CSV in one of two layouts: a headerless two-column
//! `text,label` file, or a file with a header row naming the text/label
//! (and optionally id) columns. Rows with empty text or an unparsable
//! label are dropped, never silently: every load returns a [`LoadReport`]
//! with per-reason counts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::Prng;

/// One labeled tweet as read from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTweetRecord {
    /// Optional record identifier carried through from the source file.
    pub id: Option<String>,
    pub text: String,
    /// Class index; always validated against the owning mapping before use.
    pub label: usize,
}

/// Column layout of a dataset CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CsvSchema {
    /// Headerless `text,label` rows.
    Positional,
    /// First row is a header; columns are found by name.
    Header {
        text: String,
        label: String,
        id: Option<String>,
    },
}

/// Accounting for a single load: what was read, kept, and why rows fell out.
#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
    /// Reason → count, e.g. "empty_text", "bad_label", "column_count".
    pub reasons: BTreeMap<String, usize>,
}

impl LoadReport {
    fn drop(&mut self, reason: &str) {
        self.rows_dropped += 1;
        *self.reasons.entry(reason.to_string()).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone)]
pub struct LoadedRecords {
    pub records: Vec<RawTweetRecord>,
    pub report: LoadReport,
}

/// Load a dataset CSV under the given schema. When `declared_classes` is
/// set, any label at or above it is a hard error rather than a dropped row.
pub fn load_dataset_csv(
    path: &Path,
    schema: &CsvSchema,
    declared_classes: Option<usize>,
) -> Result<LoadedRecords> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(matches!(schema, CsvSchema::Header { .. }))
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, io_of(e)),
            _ => Error::Csv(e),
        })?;

    let columns = match schema {
        CsvSchema::Positional => None,
        CsvSchema::Header { text, label, id } => {
            let headers = reader.headers().map_err(Error::Csv)?.clone();
            let find = |name: &str| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Schema(format!("column `{name}` not found in {path:?}")))
            };
            let text_idx = find(text)?;
            let label_idx = find(label)?;
            let id_idx = id.as_deref().map(find).transpose()?;
            Some((text_idx, label_idx, id_idx))
        }
    };

    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(Error::Csv)?;
        report.rows_read += 1;
        let (text, label, id) = match columns {
            None => {
                if row.len() != 2 {
                    report.drop("column_count");
                    continue;
                }
                (row.get(0), row.get(1), None)
            }
            Some((t, l, i)) => (row.get(t), row.get(l), i.and_then(|i| row.get(i))),
        };
        let (Some(text), Some(label)) = (text, label) else {
            report.drop("column_count");
            continue;
        };
        let text = text.trim();
        if text.is_empty() {
            report.drop("empty_text");
            continue;
        }
        let Ok(label) = label.trim().parse::<usize>() else {
            report.drop("bad_label");
            continue;
        };
        if let Some(c) = declared_classes {
            if label >= c {
                return Err(Error::Data(format!(
                    "label {label} outside declared range 0..{c} in {path:?}"
                )));
            }
        }
        records.push(RawTweetRecord {
            id: id.map(|s| s.to_string()),
            text: text.to_string(),
            label,
        });
        report.rows_kept += 1;
    }
    Ok(LoadedRecords { records, report })
}

// The csv error's io variant can't be moved out without consuming the
// error, so rebuild a std::io::Error for our Io variant.
fn io_of(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

/// Dense class-index → emoji table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    emoji: Vec<String>,
}

impl LabelMapping {
    pub fn new(emoji: Vec<String>) -> Result<Self> {
        if emoji.is_empty() {
            return Err(Error::Schema("empty label mapping".into()));
        }
        for (i, a) in emoji.iter().enumerate() {
            if let Some(j) = emoji[..i].iter().position(|b| b == a) {
                return Err(Error::Schema(format!(
                    "duplicate emoji {a:?} for labels {j} and {i}"
                )));
            }
        }
        Ok(LabelMapping { emoji })
    }

    pub fn num_classes(&self) -> usize {
        self.emoji.len()
    }

    pub fn emoji(&self, label: usize) -> Option<&str> {
        self.emoji.get(label).map(String::as_str)
    }

    pub fn emoji_list(&self) -> Vec<String> {
        self.emoji.clone()
    }
}

/// Load the `index,emoji` mapping file. A first row whose index column is
/// not an integer is treated as a header and skipped. Indices must be dense
/// 0..C-1 (in any order) and emoji values unique.
pub fn load_mapping(path: &Path) -> Result<LabelMapping> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, io_of(e)),
            _ => Error::Csv(e),
        })?;
    let mut by_index: BTreeMap<usize, String> = BTreeMap::new();
    for (row_no, row) in reader.records().enumerate() {
        let row = row.map_err(Error::Csv)?;
        let (Some(index), Some(emoji)) = (row.get(0), row.get(1)) else {
            return Err(Error::Schema(format!(
                "mapping row {row_no} in {path:?} does not have two columns"
            )));
        };
        let Ok(index) = index.trim().parse::<usize>() else {
            if row_no == 0 {
                continue; // header row
            }
            return Err(Error::Schema(format!(
                "mapping row {row_no}: index {index:?} is not an integer"
            )));
        };
        let emoji = emoji.trim().to_string();
        if by_index.insert(index, emoji).is_some() {
            return Err(Error::Schema(format!("duplicate index {index} in {path:?}")));
        }
    }
    let c = by_index.len();
    if let Some(missing) = (0..c).find(|i| !by_index.contains_key(i)) {
        return Err(Error::Schema(format!(
            "gap in indices: {missing} missing from mapping {path:?}"
        )));
    }
    LabelMapping::new(by_index.into_values().collect())
}

/// Deterministic stratified split: each class contributes
/// ⌊count·val_fraction⌋ records to validation, drawn by a seeded shuffle of
/// that class's positions. Record order within each side follows the input.
pub fn split_train_val(
    records: Vec<RawTweetRecord>,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<RawTweetRecord>, Vec<RawTweetRecord>)> {
    if records.len() < 2 {
        return Err(Error::Data(format!(
            "cannot split {} record(s)",
            records.len()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} not in (0, 1)"
        )));
    }
    let rng = Prng::new(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let mut to_val = vec![false; records.len()];
    for (label, mut positions) in by_class {
        let take = (positions.len() as f64 * val_fraction).floor() as usize;
        rng.substream(&format!("split-class-{label}"))
            .shuffle(&mut positions);
        for &p in positions.iter().take(take) {
            to_val[p] = true;
        }
    }
    if to_val.iter().all(|&v| v) || to_val.iter().all(|&v| !v) {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} leaves one side of the split empty"
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (r, &v) in records.into_iter().zip(&to_val) {
        if v {
            val.push(r);
        } else {
            train.push(r);
        }
    }
    Ok((train, val))
}

/// Per-class record counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub histogram: BTreeMap<usize, usize>,
    pub total: usize,
}

pub fn dataset_stats(records: &[RawTweetRecord]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for r in records {
        *stats.histogram.entry(r.label).or_insert(0) += 1;
        stats.total += 1;
    }
    stats
}

/// A fully assembled dataset: splits plus the label mapping they refer to.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub train: Vec<RawTweetRecord>,
    pub validation: Vec<RawTweetRecord>,
    pub test: Vec<RawTweetRecord>,
    pub mapping: LabelMapping,
    pub num_classes: usize,
}

impl DatasetBundle {
    /// Validate labels against the mapping and optionally carve a
    /// validation set out of train.
    pub fn assemble(
        train: Vec<RawTweetRecord>,
        test: Vec<RawTweetRecord>,
        mapping: LabelMapping,
        val_split: Option<(f64, u64)>,
    ) -> Result<Self> {
        let c = mapping.num_classes();
        for r in train.iter().chain(&test) {
            if r.label >= c {
                return Err(Error::Data(format!(
                    "label {} not covered by the {c}-class mapping",
                    r.label
                )));
            }
        }
        let (train, validation) = match val_split {
            Some((fraction, seed)) => split_train_val(train, fraction, seed)?,
            None => (train, Vec::new()),
        };
        Ok(DatasetBundle {
            train,
            validation,
            test,
            mapping,
            num_classes: c,
        })
    }
}
