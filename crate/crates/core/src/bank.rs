//! Feature banks: the labelled universe that episodes are drawn from.
//!
//! A bank is an `N x d` matrix of precomputed embeddings plus a dense class id
//! per row. Two on-disk formats are supported:
//!
//! * CSV: a header line `d,<dim>` followed by one `<label>,<f_1>,...,<f_d>` line
//!   per row.
//! * Binary: magic `AFSB`, then little-endian `u32` version (1), `N`, `d`,
//!   `C_total`, then `N` records of `u32 label` + `d` x `f32`, then an optional
//!   class-name table (`u32` count, then `u32` length-prefixed UTF-8 strings).
//!
//! Features are stored as `f32` in memory so that the binary format round-trips
//! bit-exactly.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed::rng_from_seed;

const MAGIC: &[u8; 4] = b"AFSB";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("cannot read or write bank file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown bank format `{0}` (expected csv or binary)")]
    UnknownFormat(String),
    #[error("malformed header at line {line}: {detail}")]
    MalformedHeader { line: usize, detail: String },
    #[error("line {line}: expected {expected} feature columns, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: cannot parse `{value}`")]
    Parse {
        line: usize,
        column: usize,
        value: String,
    },
    #[error("row {row}, column {column}: non-finite feature value {value}")]
    NonFinite {
        row: usize,
        column: usize,
        value: f64,
    },
    #[error("row {row}: label {label} is not below the class count {num_classes}")]
    InvalidLabel {
        row: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("class {0} has no rows in the bank")]
    MissingClass(usize),
    #[error("bank has no rows")]
    Empty,
    #[error("bad magic bytes, not an AFSB bank")]
    BadMagic,
    #[error("unsupported binary bank version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: header declares {expected} rows but only {found} are complete")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid class-name table: {0}")]
    NameTable(String),
    #[error("features have {rows} rows but {labels} labels were given")]
    LabelCount { rows: usize, labels: usize },
    #[error("row index {index} out of range for bank of {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// On-disk bank encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankFormat {
    Csv,
    Binary,
}

impl BankFormat {
    /// `.csv` files are text, everything else is treated as binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => BankFormat::Csv,
            _ => BankFormat::Binary,
        }
    }
}

impl FromStr for BankFormat {
    type Err = BankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(BankFormat::Csv),
            "binary" | "bin" | "afsb" => Ok(BankFormat::Binary),
            other => Err(BankError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for BankFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BankFormat::Csv => f.write_str("csv"),
            BankFormat::Binary => f.write_str("binary"),
        }
    }
}

/// Immutable labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    features: Array2<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
    source: String,
    members: Vec<Vec<usize>>,
}

impl FeatureBank {
    /// Builds a bank and checks its invariants. The class count is inferred as
    /// `max(label) + 1`.
    pub fn new(
        features: Array2<f32>,
        labels: Vec<usize>,
        class_names: Option<Vec<String>>,
        source: impl Into<String>,
    ) -> Result<Self, BankError> {
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Self::with_class_count(features, labels, num_classes, class_names, source)
    }

    fn with_class_count(
        features: Array2<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        class_names: Option<Vec<String>>,
        source: impl Into<String>,
    ) -> Result<Self, BankError> {
        if features.nrows() != labels.len() {
            return Err(BankError::LabelCount {
                rows: features.nrows(),
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(BankError::Empty);
        }
        for (row, values) in features.outer_iter().enumerate() {
            if let Some((column, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(BankError::NonFinite {
                    row,
                    column,
                    value: v as f64,
                });
            }
        }
        let mut members = vec![Vec::new(); num_classes];
        for (row, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(BankError::InvalidLabel {
                    row,
                    label,
                    num_classes,
                });
            }
            members[label].push(row);
        }
        if let Some(class) = members.iter().position(Vec::is_empty) {
            return Err(BankError::MissingClass(class));
        }
        if let Some(names) = &class_names {
            if names.len() != num_classes {
                return Err(BankError::NameTable(format!(
                    "{} names for {} classes",
                    names.len(),
                    num_classes
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            class_names,
            source: source.into(),
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn row(&self, index: usize) -> ArrayView1<'_, f32> {
        self.features.row(index)
    }

    /// Row ids belonging to `class`, in bank order.
    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    /// The ground-truth label of a row. This is the only way the active loop
    /// learns a label.
    pub fn reveal_label(&self, index: usize) -> Result<usize, BankError> {
        self.labels
            .get(index)
            .copied()
            .ok_or(BankError::IndexOutOfRange {
                index,
                len: self.len(),
            })
    }

    pub fn load(path: impl AsRef<Path>, format: BankFormat) -> Result<Self, BankError> {
        let path = path.as_ref();
        let io_err = |source| BankError::Io {
            path: path.display().to_string(),
            source,
        };
        let source = path.display().to_string();
        match format {
            BankFormat::Csv => {
                let text = fs::read_to_string(path).map_err(io_err)?;
                Self::from_csv_str(&text, source)
            }
            BankFormat::Binary => {
                let bytes = fs::read(path).map_err(io_err)?;
                Self::from_binary_bytes(&bytes, source)
            }
        }
    }

    pub fn write(&self, path: impl AsRef<Path>, format: BankFormat) -> Result<(), BankError> {
        let path = path.as_ref();
        let bytes = match format {
            BankFormat::Csv => self.to_csv_string().into_bytes(),
            BankFormat::Binary => self.to_binary_bytes(),
        };
        fs::write(path, bytes).map_err(|source| BankError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_csv_str(text: &str, source: impl Into<String>) -> Result<Self, BankError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (header_line, header) = lines.next().ok_or(BankError::MalformedHeader {
            line: 1,
            detail: "missing `d,<dim>` header".into(),
        })?;
        let dim = match header.split_once(',') {
            Some((key, value)) if key.trim() == "d" => {
                value
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| BankError::MalformedHeader {
                        line: header_line,
                        detail: format!("dimension `{}` is not a count", value.trim()),
                    })?
            }
            _ => {
                return Err(BankError::MalformedHeader {
                    line: header_line,
                    detail: format!("expected `d,<dim>`, found `{header}`"),
                })
            }
        };
        if dim == 0 {
            return Err(BankError::MalformedHeader {
                line: header_line,
                detail: "dimension must be at least 1".into(),
            });
        }

        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (line, content) in lines {
            let fields: Vec<&str> = content.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(BankError::DimensionMismatch {
                    line,
                    expected: dim,
                    found: fields.len().saturating_sub(1),
                });
            }
            let label = fields[0].parse::<usize>().map_err(|_| BankError::Parse {
                line,
                column: 1,
                value: fields[0].to_string(),
            })?;
            labels.push(label);
            for (offset, field) in fields[1..].iter().enumerate() {
                let v = field.parse::<f32>().map_err(|_| BankError::Parse {
                    line,
                    column: offset + 2,
                    value: field.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(BankError::NonFinite {
                        row: labels.len() - 1,
                        column: offset,
                        value: v as f64,
                    });
                }
                values.push(v);
            }
        }
        let rows = labels.len();
        let features = Array2::from_shape_vec((rows, dim), values)
            .expect("row lengths validated during parsing");
        Self::new(features, labels, None, source)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("d,{}\n", self.dim());
        for (label, row) in self.labels.iter().zip(self.features.outer_iter()) {
            out.push_str(&label.to_string());
            for v in row {
                out.push(',');
                // Display on f32 prints the shortest representation that
                // parses back to the same value.
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_binary_bytes(bytes: &[u8], source: impl Into<String>) -> Result<Self, BankError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(4) != Some(MAGIC.as_slice()) {
            return Err(BankError::BadMagic);
        }
        let header_err = |what: &str| BankError::MalformedHeader {
            line: 0,
            detail: format!("binary header ends before {what}"),
        };
        let version = cursor.u32().ok_or_else(|| header_err("version"))?;
        if version != VERSION {
            return Err(BankError::UnsupportedVersion(version));
        }
        let rows = cursor.u32().ok_or_else(|| header_err("N"))? as usize;
        let dim = cursor.u32().ok_or_else(|| header_err("d"))? as usize;
        let num_classes = cursor.u32().ok_or_else(|| header_err("C_total"))? as usize;
        if dim == 0 {
            return Err(BankError::MalformedHeader {
                line: 0,
                detail: "dimension must be at least 1".into(),
            });
        }

        let record = 4 + 4 * dim;
        let available = cursor.remaining() / record;
        if available < rows {
            return Err(BankError::TruncatedPayload {
                expected: rows,
                found: available,
            });
        }
        let mut labels = Vec::with_capacity(rows);
        let mut values = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            labels.push(cursor.u32().expect("length checked") as usize);
            for _ in 0..dim {
                values.push(f32::from_le_bytes(cursor.array4().expect("length checked")));
            }
        }

        let class_names = if cursor.remaining() == 0 {
            None
        } else {
            let count = cursor
                .u32()
                .ok_or_else(|| BankError::NameTable("incomplete count".into()))?
                as usize;
            let mut names = Vec::with_capacity(count.min(1 << 16));
            for i in 0..count {
                let len = cursor
                    .u32()
                    .ok_or_else(|| BankError::NameTable(format!("name {i}: missing length")))?
                    as usize;
                let raw = cursor
                    .take(len)
                    .ok_or_else(|| BankError::NameTable(format!("name {i}: truncated")))?;
                let name = std::str::from_utf8(raw)
                    .map_err(|_| BankError::NameTable(format!("name {i}: invalid UTF-8")))?;
                names.push(name.to_string());
            }
            if cursor.remaining() != 0 {
                return Err(BankError::NameTable(format!(
                    "{} trailing bytes",
                    cursor.remaining()
                )));
            }
            Some(names)
        };

        let features =
            Array2::from_shape_vec((rows, dim), values).expect("payload sized from header");
        Self::with_class_count(features, labels, num_classes, class_names, source)
    }

    pub fn to_binary_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.len() * (4 + 4 * self.dim()));
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.len() as u32,
            self.dim() as u32,
            self.num_classes as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (label, row) in self.labels.iter().zip(self.features.outer_iter()) {
            out.extend_from_slice(&(*label as u32).to_le_bytes());
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(names) = &self.class_names {
            out.extend_from_slice(&(names.len() as u32).to_le_bytes());
            for name in names {
                out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
            }
        }
        out
    }

    /// SHA-256 of the binary encoding, hex encoded.
    pub fn digest(&self) -> String {
        hex_digest(&self.to_binary_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn array4(&mut self) -> Option<[u8; 4]> {
        self.take(4).map(|s| s.try_into().expect("four bytes"))
    }

    fn u32(&mut self) -> Option<u32> {
        self.array4().map(u32::from_le_bytes)
    }
}

/// Parameters of an isotropic Gaussian mixture bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Standard deviation of class-center coordinates.
    pub center_spread: f64,
    /// Isotropic within-class standard deviation.
    pub within_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), BankError> {
        let fail = |msg: &str| Err(BankError::InvalidSpec(msg.to_string()));
        if self.classes < 2 {
            return fail("classes must be at least 2");
        }
        if self.dim < 1 {
            return fail("dim must be at least 1");
        }
        if self.samples_per_class < 1 {
            return fail("samples_per_class must be at least 1");
        }
        if !(self.center_spread >= 0.0 && self.center_spread.is_finite()) {
            return fail("center_spread must be a nonnegative finite number");
        }
        if !(self.within_std > 0.0 && self.within_std.is_finite()) {
            return fail("within_std must be positive and finite");
        }
        Ok(())
    }

    fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex_digest(json.as_bytes())[..16].to_string()
    }
}

/// Draws a bank from the mixture described by `spec`. Rows are grouped by
/// class, `samples_per_class` rows each.
pub fn generate_synthetic_bank(spec: &SyntheticSpec) -> Result<FeatureBank, BankError> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let center_dist =
        Normal::new(0.0, spec.center_spread).map_err(|e| BankError::InvalidSpec(e.to_string()))?;
    let noise =
        Normal::new(0.0, spec.within_std).map_err(|e| BankError::InvalidSpec(e.to_string()))?;

    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| center_dist.sample(&mut rng))
                .collect()
        })
        .collect();

    let rows = spec.classes * spec.samples_per_class;
    let mut values = Vec::with_capacity(rows * spec.dim);
    let mut labels = Vec::with_capacity(rows);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            labels.push(class);
            values.extend(center.iter().map(|c| (c + noise.sample(&mut rng)) as f32));
        }
    }
    let features = Array2::from_shape_vec((rows, spec.dim), values).expect("sized above");
    FeatureBank::new(
        features,
        labels,
        None,
        format!("synthetic:{}", spec.fingerprint()),
    )
}
