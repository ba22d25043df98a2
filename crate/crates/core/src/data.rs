//! Logit/label interchange, the model registry and class partitioning.
//!
//! Two on-disk dataset formats are supported:
//!
//! * CSV: UTF-8, header `label,logit_0,...,logit_{K-1}`, one sample per row.
//! * Binary: a JSON manifest next to a row-major `.f32` logit payload and a
//!   `.labels.u32` label payload (see [`BinaryManifest`]).
//!
//! Logits are stored as 32-bit floats; every computation downstream widens
//! to `f64`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Softmax,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Softmax => f.write_str("softmax"),
        }
    }
}

impl FromStr for Activation {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            other => Err(AuditError::Domain(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreatModel {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    /// `.csv` files are CSV; `.json` manifests are the binary format.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DatasetFormat::Csv),
            "json" => Some(DatasetFormat::Binary),
            _ => None,
        }
    }
}

/// An `N x K` matrix of raw logits with one ground-truth label per row.
///
/// Construction validates every invariant, so a `LogitDataset` in hand is
/// always well formed: `N >= 1`, `K >= 2`, all logits finite and every label
/// in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDataset {
    model_id: String,
    dataset_id: String,
    num_classes: usize,
    logits: Vec<f32>,
    labels: Vec<u32>,
    class_names: Vec<String>,
}

impl LogitDataset {
    pub fn new(
        model_id: impl Into<String>,
        dataset_id: impl Into<String>,
        num_classes: usize,
        logits: Vec<f32>,
        labels: Vec<u32>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(AuditError::InvalidDataset(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if labels.is_empty() {
            return Err(AuditError::InvalidDataset("dataset has no samples".into()));
        }
        if logits.len() != labels.len() * num_classes {
            return Err(AuditError::InvalidDataset(format!(
                "logit matrix has {} entries, expected {} x {}",
                logits.len(),
                labels.len(),
                num_classes
            )));
        }
        for (row, &label) in labels.iter().enumerate() {
            if label as usize >= num_classes {
                return Err(AuditError::InvalidRow {
                    row,
                    message: format!("label {label} out of range [0, {num_classes})"),
                });
            }
        }
        if let Some(idx) = logits.iter().position(|v| !v.is_finite()) {
            return Err(AuditError::InvalidRow {
                row: idx / num_classes,
                message: format!("non-finite logit {} in column {}", logits[idx], idx % num_classes),
            });
        }
        let class_names = match class_names {
            Some(names) if names.len() != num_classes => {
                return Err(AuditError::InvalidDataset(format!(
                    "{} class names for {} classes",
                    names.len(),
                    num_classes
                )))
            }
            Some(names) => names,
            None => default_class_names(num_classes),
        };
        Ok(LogitDataset {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            num_classes,
            logits,
            labels,
            class_names,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Iterates `(logit_row, label)` pairs in sample order.
    pub fn samples(&self) -> impl Iterator<Item = (&[f32], usize)> + '_ {
        self.logits
            .chunks_exact(self.num_classes)
            .zip(self.labels.iter().map(|&l| l as usize))
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }
}

pub fn default_class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|k| format!("class_{k}")).collect()
}

/// Sidecar manifest for the binary interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryManifest {
    pub model_id: String,
    pub dataset_id: String,
    pub num_samples: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    pub endianness: Endianness,
    /// Relative paths are resolved against the manifest's directory.
    pub logits_file: PathBuf,
    pub labels_file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Little,
    Big,
}

pub fn load_logit_dataset(path: &Path, format: DatasetFormat) -> Result<LogitDataset> {
    match format {
        DatasetFormat::Csv => load_csv(path),
        DatasetFormat::Binary => load_binary(path),
    }
}

pub fn export_logit_dataset(ds: &LogitDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Csv => export_csv(ds, path),
        DatasetFormat::Binary => export_binary(ds, path),
    }
}

/// Loads a dataset, picking the format from the file extension.
pub fn load_dataset_auto(path: &Path) -> Result<LogitDataset> {
    let format = DatasetFormat::from_path(path).ok_or_else(|| {
        AuditError::Domain(format!(
            "{}: cannot infer dataset format (expected .csv or .json)",
            path.display()
        ))
    })?;
    load_logit_dataset(path, format)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

fn load_csv(path: &Path) -> Result<LogitDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let num_classes = parse_csv_header(path, &header)?;

    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| AuditError::InvalidRow {
            row,
            message: format!("line {line}: {e}"),
        })?;
        if record.len() != num_classes + 1 {
            return Err(AuditError::InvalidRow {
                row,
                message: format!(
                    "line {line}: expected {} fields, found {}",
                    num_classes + 1,
                    record.len()
                ),
            });
        }
        let label: u32 = record[0].parse().map_err(|_| AuditError::InvalidRow {
            row,
            message: format!("line {line}: bad label `{}`", &record[0]),
        })?;
        if label as usize >= num_classes {
            return Err(AuditError::InvalidRow {
                row,
                message: format!("line {line}: label {label} out of range [0, {num_classes})"),
            });
        }
        labels.push(label);
        for (col, field) in record.iter().skip(1).enumerate() {
            let value: f32 = field.parse().map_err(|_| AuditError::InvalidRow {
                row,
                message: format!("line {line}: bad logit `{field}` in column {col}"),
            })?;
            if !value.is_finite() {
                return Err(AuditError::InvalidRow {
                    row,
                    message: format!("line {line}: non-finite logit `{field}` in column {col}"),
                });
            }
            logits.push(value);
        }
    }

    let stem = file_stem(path);
    LogitDataset::new(stem.clone(), stem, num_classes, logits, labels, None)
}

fn parse_csv_header(path: &Path, header: &csv::StringRecord) -> Result<usize> {
    let malformed = |message: String| AuditError::MalformedHeader {
        path: path.to_path_buf(),
        message,
    };
    if header.get(0) != Some("label") {
        return Err(malformed("first column must be `label`".into()));
    }
    let num_classes = header.len() - 1;
    for (k, name) in header.iter().skip(1).enumerate() {
        if name != format!("logit_{k}") {
            return Err(malformed(format!("column {} is `{name}`, expected `logit_{k}`", k + 1)));
        }
    }
    if num_classes < 2 {
        return Err(malformed(format!("need at least 2 logit columns, found {num_classes}")));
    }
    Ok(num_classes)
}

fn csv_error(path: &Path, e: csv::Error) -> AuditError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => AuditError::io(path, source),
        other => AuditError::MalformedHeader {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn export_csv(ds: &LogitDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| AuditError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| AuditError::io(path, e);

    write!(out, "label").map_err(io)?;
    for k in 0..ds.num_classes() {
        write!(out, ",logit_{k}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    // `{}` on f32 prints the shortest decimal that parses back to the same
    // value, so the text round trip is exact.
    for (row, label) in ds.samples() {
        write!(out, "{label}").map_err(io)?;
        for v in row {
            write!(out, ",{v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn payload_paths(manifest_path: &Path) -> (PathBuf, PathBuf) {
    let stem = file_stem(manifest_path);
    (
        PathBuf::from(format!("{stem}.f32")),
        PathBuf::from(format!("{stem}.labels.u32")),
    )
}

fn export_binary(ds: &LogitDataset, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let (logits_file, labels_file) = payload_paths(path);

    let mut logit_bytes = Vec::with_capacity(ds.logits.len() * 4);
    for v in &ds.logits {
        logit_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut label_bytes = Vec::with_capacity(ds.labels.len() * 4);
    for v in &ds.labels {
        label_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let logits_path = dir.join(&logits_file);
    let labels_path = dir.join(&labels_file);
    fs::write(&logits_path, logit_bytes).map_err(|e| AuditError::io(&logits_path, e))?;
    fs::write(&labels_path, label_bytes).map_err(|e| AuditError::io(&labels_path, e))?;

    let manifest = BinaryManifest {
        model_id: ds.model_id.clone(),
        dataset_id: ds.dataset_id.clone(),
        num_samples: ds.num_samples(),
        num_classes: ds.num_classes,
        class_names: Some(ds.class_names.clone()),
        endianness: Endianness::Little,
        logits_file,
        labels_file,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, json).map_err(|e| AuditError::io(path, e))
}

fn load_binary(path: &Path) -> Result<LogitDataset> {
    let text = fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let manifest: BinaryManifest = serde_json::from_str(&text).map_err(|e| AuditError::MalformedHeader {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let n = manifest.num_samples;
    let k = manifest.num_classes;

    let logits_path = dir.join(&manifest.logits_file);
    let raw = fs::read(&logits_path).map_err(|e| AuditError::io(&logits_path, e))?;
    let expected = n
        .checked_mul(k)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| AuditError::InvalidDataset("declared shape overflows".into()))?;
    if raw.len() != expected {
        return Err(AuditError::InvalidDataset(format!(
            "{}: payload has {} bytes, manifest declares {n} x {k} f32 ({expected} bytes)",
            logits_path.display(),
            raw.len()
        )));
    }
    let decode_f32: fn([u8; 4]) -> f32 = match manifest.endianness {
        Endianness::Little => f32::from_le_bytes,
        Endianness::Big => f32::from_be_bytes,
    };
    let logits: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| decode_f32([c[0], c[1], c[2], c[3]]))
        .collect();

    let labels_path = dir.join(&manifest.labels_file);
    let raw = fs::read(&labels_path).map_err(|e| AuditError::io(&labels_path, e))?;
    if raw.len() != n * 4 {
        return Err(AuditError::InvalidDataset(format!(
            "{}: label payload has {} bytes, expected {}",
            labels_path.display(),
            raw.len(),
            n * 4
        )));
    }
    let decode_u32: fn([u8; 4]) -> u32 = match manifest.endianness {
        Endianness::Little => u32::from_le_bytes,
        Endianness::Big => u32::from_be_bytes,
    };
    let labels: Vec<u32> = raw
        .chunks_exact(4)
        .map(|c| decode_u32([c[0], c[1], c[2], c[3]]))
        .collect();

    LogitDataset::new(
        manifest.model_id,
        manifest.dataset_id,
        k,
        logits,
        labels,
        manifest.class_names,
    )
}

/// One entry of the model registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    /// Percent, in `[0, 100]`.
    pub clean_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustbench_accuracy: Option<f64>,
    pub threat_model: ThreatModel,
    pub activation: Activation,
}

/// Checks uniqueness of ids and accuracy ranges.
pub fn validate_registry(records: &[ModelRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.model_id.as_str()) {
            return Err(AuditError::Registry(format!("duplicate model_id `{}`", r.model_id)));
        }
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        if !in_range(r.clean_accuracy) {
            return Err(AuditError::Registry(format!(
                "`{}`: clean_accuracy {} outside [0, 100]",
                r.model_id, r.clean_accuracy
            )));
        }
        if let Some(acc) = r.robustbench_accuracy {
            if !in_range(acc) {
                return Err(AuditError::Registry(format!(
                    "`{}`: robustbench_accuracy {acc} outside [0, 100]",
                    r.model_id
                )));
            }
        }
    }
    Ok(())
}

pub fn parse_registry(text: &str) -> Result<Vec<ModelRecord>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let records: Vec<ModelRecord> = serde_json::from_str(text).map_err(|e| AuditError::Registry(e.to_string()))?;
    validate_registry(&records)?;
    Ok(records)
}

pub fn load_registry(path: &Path) -> Result<Vec<ModelRecord>> {
    let text = fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    parse_registry(&text).map_err(|e| match e {
        AuditError::Registry(msg) => AuditError::Registry(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Sample indices whose ground-truth label is `class_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    pub class_index: usize,
    pub sample_indices: Vec<usize>,
}

impl ClassPartition {
    pub fn count(&self) -> usize {
        self.sample_indices.len()
    }
}

/// Exactly `K` partitions, in class order; empty classes get empty partitions.
pub fn partition_by_class(ds: &LogitDataset) -> Vec<ClassPartition> {
    let mut parts: Vec<ClassPartition> = (0..ds.num_classes())
        .map(|class_index| ClassPartition {
            class_index,
            sample_indices: Vec::new(),
        })
        .collect();
    for (i, &label) in ds.labels().iter().enumerate() {
        parts[label as usize].sample_indices.push(i);
    }
    parts
}
