//! Schema-typed tabular data: CSV ingestion, label encoding, class
//! balancing, splitting, and a seeded synthetic fraud-style generator.

mod csv_io;
mod ops;
mod synth;

pub use csv_io::{load_csv, read_table_csv, write_table_csv};
pub use ops::{balance_classes, train_test_split};
pub use synth::{synth_fraud, SynthFraudConfig};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RowWidth { row: usize, expected: usize, found: usize },
    #[error("no data rows")]
    Empty,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("label column must have exactly 2 observed values, found {0}")]
    LabelCardinality(usize),
    #[error("class {0} has no rows")]
    MissingClass(u8),
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Continuous }
    }
    pub fn categorical(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Categorical }
    }
}

/// Ordered feature columns plus the name of the binary label column.
///
/// The label may also be listed among the columns of the JSON form (it must
/// then be categorical); it is kept out of the feature list either way.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct Schema {
    columns: Vec<ColumnSpec>,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    columns: Vec<ColumnSpec>,
    label: String,
}

impl TryFrom<SchemaFile> for Schema {
    type Error = DataError;
    fn try_from(f: SchemaFile) -> Result<Self> {
        Schema::new(f.columns, f.label)
    }
}

impl From<Schema> for SchemaFile {
    fn from(s: Schema) -> Self {
        SchemaFile { columns: s.columns, label: s.label }
    }
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let mut seen = std::collections::BTreeSet::new();
        let mut features = Vec::with_capacity(columns.len());
        for c in columns {
            if !seen.insert(c.name.clone()) {
                return Err(DataError::InvalidSchema(format!("duplicate column `{}`", c.name)));
            }
            if c.name == label {
                if c.kind != ColumnKind::Categorical {
                    return Err(DataError::InvalidSchema(format!("label `{label}` must be categorical")));
                }
                continue;
            }
            features.push(c);
        }
        if label.is_empty() {
            return Err(DataError::InvalidSchema("empty label name".into()));
        }
        if features.is_empty() {
            return Err(DataError::InvalidSchema("no feature columns".into()));
        }
        Ok(Self { columns: features, label })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Number of feature columns (the label excluded).
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn kind(&self, col: usize) -> ColumnKind {
        self.columns[col].kind
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn categorical_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.columns.iter().enumerate().filter(|(_, c)| c.kind == ColumnKind::Categorical).map(|(i, _)| i)
    }
}

/// Per categorical column, the sorted list of original strings; a value's
/// code is its index in the list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EncoderMap {
    pub columns: BTreeMap<String, Vec<String>>,
    pub label: Vec<String>,
}

impl EncoderMap {
    /// Fits a map by sorting unique values lexicographically.
    pub fn fit_values<'a>(values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = values.into_iter().collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn encode(&self, column: &str, value: &str) -> Option<u32> {
        let values = self.columns.get(column)?;
        values.binary_search_by(|v| v.as_str().cmp(value)).ok().map(|i| i as u32)
    }

    pub fn decode(&self, column: &str, code: u32) -> Option<&str> {
        self.columns.get(column)?.get(code as usize).map(String::as_str)
    }

    pub fn cardinality(&self, column: &str) -> Option<usize> {
        self.columns.get(column).map(Vec::len)
    }
}

/// Encoded table: row-major feature values (reals for continuous columns,
/// integer codes stored as `f32` for categorical ones) and 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Schema,
    features: Vec<f32>,
    labels: Vec<u8>,
    cardinalities: Vec<Option<usize>>,
    encoder: Option<EncoderMap>,
}

impl Table {
    /// Builds a table, validating widths, finiteness, and categorical codes.
    /// Cardinalities come from `encoder` when present, else from the largest
    /// observed code.
    pub fn new(schema: Schema, features: Vec<f32>, labels: Vec<u8>, encoder: Option<EncoderMap>) -> Result<Self> {
        let width = schema.width();
        if features.len() != labels.len() * width {
            return Err(DataError::InvalidTable(format!(
                "{} feature values do not form {} rows of width {width}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(DataError::InvalidTable(format!("label {bad} is not binary")));
        }
        let mut cardinalities = vec![None; width];
        for (col, spec) in schema.columns().iter().enumerate() {
            if spec.kind == ColumnKind::Categorical {
                let observed = features.iter().skip(col).step_by(width).fold(0usize, |m, &v| m.max(v as usize + 1));
                let card = encoder.as_ref().and_then(|e| e.cardinality(&spec.name)).unwrap_or(observed).max(1);
                cardinalities[col] = Some(card);
            }
        }
        for (i, &v) in features.iter().enumerate() {
            let col = i % width;
            if !v.is_finite() {
                return Err(DataError::InvalidTable(format!("row {}, column {col}: non-finite value", i / width)));
            }
            if let Some(card) = cardinalities[col] {
                if v < 0.0 || v.fract() != 0.0 || v as usize >= card {
                    return Err(DataError::InvalidTable(format!(
                        "row {}, column `{}`: code {v} invalid for cardinality {card}",
                        i / width,
                        schema.columns()[col].name
                    )));
                }
            }
        }
        Ok(Self { schema, features, labels, cardinalities, encoder })
    }

    /// Empty table sharing this table's schema, cardinalities, and encoder.
    pub fn empty_like(&self) -> Self {
        Self {
            schema: self.schema.clone(),
            features: Vec::new(),
            labels: Vec::new(),
            cardinalities: self.cardinalities.clone(),
            encoder: self.encoder.clone(),
        }
    }

    /// Like `new`, but inherits cardinalities and encoder from `template`.
    pub fn from_rows_like(template: &Table, features: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        let mut t = Table::new(template.schema.clone(), features, labels, template.encoder.clone())?;
        for (c, card) in t.cardinalities.iter_mut().zip(&template.cardinalities) {
            if let (Some(c), Some(tc)) = (c.as_mut(), card) {
                if *c > *tc {
                    return Err(DataError::InvalidTable(format!("code beyond template cardinality {tc}")));
                }
                *c = *tc;
            }
        }
        Ok(t)
    }

    /// Replaces categorical cardinalities, e.g. with fit-time values, after
    /// checking every code fits.
    pub fn with_cardinalities(mut self, cards: &[Option<usize>]) -> Result<Self> {
        if cards.len() != self.width() {
            return Err(DataError::InvalidTable(format!("{} cardinalities for width {}", cards.len(), self.width())));
        }
        for (c, (mine, &theirs)) in self.cardinalities.iter_mut().zip(cards).enumerate() {
            if let (Some(m), Some(t)) = (mine.as_mut(), theirs) {
                if self.features.iter().skip(c).step_by(self.schema.width()).any(|&v| v as usize >= t) {
                    return Err(DataError::InvalidTable(format!("code beyond cardinality {t} in column {c}")));
                }
                *m = t;
            }
        }
        Ok(self)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn encoder(&self) -> Option<&EncoderMap> {
        self.encoder.as_ref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.schema.width()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.features.chunks(self.width().max(1)).take(self.len())
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn cardinality(&self, col: usize) -> Option<usize> {
        self.cardinalities[col]
    }

    pub fn cardinalities(&self) -> &[Option<usize>] {
        &self.cardinalities
    }

    /// `[count of label 0, count of label 1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.len() - ones, ones]
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        let w = self.width();
        let mut features = Vec::with_capacity(indices.len() * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self { features, labels, ..self.empty_like() }
    }

    /// Appends `other`'s rows; schemas must match.
    pub fn concat(&self, other: &Table) -> Result<Self> {
        if self.schema != other.schema {
            return Err(DataError::SchemaMismatch("concatenating tables with different schemas".into()));
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        for (a, b) in out.cardinalities.iter_mut().zip(&other.cardinalities) {
            if let (Some(a), Some(b)) = (a.as_mut(), b) {
                *a = (*a).max(*b);
            }
        }
        Ok(out)
    }

    pub fn check_same_schema(&self, other: &Table) -> Result<()> {
        if self.schema != other.schema {
            return Err(DataError::SchemaMismatch(format!(
                "expected columns {:?}, got {:?}",
                self.schema.columns().iter().map(|c| &c.name).collect::<Vec<_>>(),
                other.schema.columns().iter().map(|c| &c.name).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }
}

/// Parsed CSV before label encoding: categorical columns still hold strings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    pub columns: Vec<RawColumn>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Continuous(Vec<f32>),
    Categorical(Vec<String>),
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Maps every categorical column (and the label) to integer codes in
/// lexicographic order of the distinct strings.
pub fn label_encode(raw: &RawTable) -> Result<(Table, EncoderMap)> {
    let mut encoder = EncoderMap { label: EncoderMap::fit_values(raw.labels.iter().map(String::as_str)), ..Default::default() };
    if encoder.label.len() != 2 {
        return Err(DataError::LabelCardinality(encoder.label.len()));
    }
    for (spec, col) in raw.schema.columns().iter().zip(&raw.columns) {
        if let RawColumn::Categorical(values) = col {
            encoder.columns.insert(spec.name.clone(), EncoderMap::fit_values(values.iter().map(String::as_str)));
        }
    }
    let n = raw.len();
    let width = raw.schema.width();
    let mut features = vec![0.0f32; n * width];
    for (c, (spec, col)) in raw.schema.columns().iter().zip(&raw.columns).enumerate() {
        match col {
            RawColumn::Continuous(values) => {
                for (r, &v) in values.iter().enumerate() {
                    features[r * width + c] = v;
                }
            }
            RawColumn::Categorical(values) => {
                for (r, v) in values.iter().enumerate() {
                    features[r * width + c] = encoder.encode(&spec.name, v).expect("fitted above") as f32;
                }
            }
        }
    }
    let labels = raw
        .labels
        .iter()
        .map(|l| encoder.label.binary_search(l).expect("fitted above") as u8)
        .collect();
    let table = Table::new(raw.schema.clone(), features, labels, Some(encoder.clone()))?;
    Ok((table, encoder))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(values: &[&str]) -> RawTable {
        let schema = Schema::new(vec![ColumnSpec::categorical("c")], "y").unwrap();
        RawTable {
            schema,
            columns: vec![RawColumn::Categorical(values.iter().map(|s| s.to_string()).collect())],
            labels: (0..values.len()).map(|i| (i % 2).to_string()).collect(),
        }
    }

    #[test]
    fn encodes_in_sorted_order() {
        let (t, enc) = label_encode(&raw(&["BB", "AA", "BB"])).unwrap();
        assert_eq!(t.features(), &[1.0, 0.0, 1.0]);
        assert_eq!(enc.columns["c"], vec!["AA", "BB"]);
        assert_eq!(enc.decode("c", 1), Some("BB"));
        assert_eq!(t.cardinality(0), Some(2));
    }

    #[test]
    fn single_value_encodes_to_zero() {
        let (t, _) = label_encode(&raw(&["only", "only"])).unwrap();
        assert_eq!(t.features(), &[0.0, 0.0]);
    }

    #[test]
    fn label_needs_two_values() {
        let mut r = raw(&["a", "b"]);
        r.labels = vec!["x".into(), "x".into()];
        assert!(matches!(label_encode(&r), Err(DataError::LabelCardinality(1))));
    }

    #[test]
    fn schema_rejects_duplicates_and_numeric_label() {
        let dup = Schema::new(vec![ColumnSpec::continuous("a"), ColumnSpec::continuous("a")], "y");
        assert!(dup.is_err());
        let bad = Schema::new(vec![ColumnSpec::continuous("a"), ColumnSpec::continuous("y")], "y");
        assert!(bad.is_err());
        let ok = Schema::new(vec![ColumnSpec::continuous("a"), ColumnSpec::categorical("y")], "y").unwrap();
        assert_eq!(ok.width(), 1);
    }

    #[test]
    fn schema_json_form() {
        let s: Schema = serde_json::from_str(
            r#"{"columns":[{"name":"amount","kind":"continuous"},{"name":"payment_type","kind":"categorical"}],"label":"fraud_bool"}"#,
        )
        .unwrap();
        assert_eq!(s.width(), 2);
        assert_eq!(s.kind(1), ColumnKind::Categorical);
    }

    #[test]
    fn table_rejects_bad_codes() {
        let schema = Schema::new(vec![ColumnSpec::categorical("c")], "y").unwrap();
        assert!(Table::new(schema.clone(), vec![0.5], vec![0], None).is_err());
        assert!(Table::new(schema.clone(), vec![f32::NAN], vec![0], None).is_err());
        assert!(Table::new(schema, vec![1.0], vec![2], None).is_err());
    }
}
