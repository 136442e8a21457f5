//! CSV ingestion, column-kind inference, and encoding of tabular claim data
//! into model-ready numeric matrices.
//!
//! Kind inference: a column whose every non-empty cell is a valid
//! `YYYY-MM-DD` date becomes a date column (stored as days since
//! 1970-01-01); a column whose every non-empty cell parses as a finite real
//! becomes numeric; everything else is categorical. Missing numeric and date
//! cells are imputed with the column median; missing categorical cells become
//! a dedicated "missing" category.

use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::collections::HashSet;
use std::path::Path;

pub const MISSING_CATEGORY: &str = "missing";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Categorical,
    Numeric,
    Date,
}

/// Raw tabular data: typed feature columns plus a binary label.
#[derive(Debug, Clone)]
pub struct TabularDataset {
    pub column_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    /// Row-major raw cells, one string per feature column.
    pub rows: Vec<Vec<String>>,
    pub label_name: String,
    pub labels: Vec<u8>,
    /// Original label values indexed by their mapped code, `[negative, positive]`.
    pub label_values: [String; 2],
}

/// Reversible per-column mapping used by [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnEncoder {
    /// Integer codes in first-appearance order, then scaled by `1/(n-1)`.
    Categorical { categories: Vec<String> },
    Numeric { min: f64, max: f64 },
    /// Stored as days since 1970-01-01 before min-max scaling.
    Date { min: f64, max: f64 },
}

impl ColumnEncoder {
    /// Map a scaled value back to the raw (pre-scaling) numeric value; for
    /// categorical columns this is the integer code.
    pub fn unscale(&self, scaled: f64) -> f64 {
        match *self {
            ColumnEncoder::Categorical { ref categories } => {
                (scaled * (categories.len().saturating_sub(1)) as f64).round()
            }
            ColumnEncoder::Numeric { min, max } | ColumnEncoder::Date { min, max } => {
                scaled * (max - min) + min
            }
        }
    }

    /// Map a scaled value back to the original cell text.
    pub fn decode(&self, scaled: f64) -> String {
        match *self {
            ColumnEncoder::Categorical { ref categories } => {
                let idx = (self.unscale(scaled) as usize).min(categories.len() - 1);
                categories[idx].clone()
            }
            ColumnEncoder::Numeric { .. } => format!("{}", self.unscale(scaled)),
            ColumnEncoder::Date { .. } => {
                let days = self.unscale(scaled).round() as i64;
                date_from_ordinal(days)
                    .map(|d| d.format("%Y-%m-%d").to_string())
                    .unwrap_or_default()
            }
        }
    }
}

/// Model-ready matrix: all entries finite, scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    values: Vec<f64>,
    n_features: usize,
    pub feature_names: Vec<String>,
    pub encoders: Vec<ColumnEncoder>,
    pub labels: Vec<u8>,
}

impl EncodedMatrix {
    /// Assemble a matrix from row-major values; used for synthetic data. The
    /// encoders are identity numeric maps.
    pub fn from_parts(
        feature_names: Vec<String>,
        values: Vec<f64>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let n_features = feature_names.len();
        if n_features == 0 || values.len() != labels.len() * n_features {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} rows x {} features",
                values.len(),
                labels.len(),
                n_features
            )));
        }
        Ok(Self {
            values,
            n_features,
            feature_names,
            encoders: vec![ColumnEncoder::Numeric { min: 0.0, max: 1.0 }; n_features],
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let positives = self.labels.iter().filter(|&&y| y == 1).count();
        (positives, self.labels.len() - positives)
    }

    /// New matrix holding the given rows of `self`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            values,
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
            encoders: self.encoders.clone(),
            labels,
        }
    }

    /// Append one row (used by resampling).
    pub fn push_row(&mut self, row: &[f64], label: u8) {
        debug_assert_eq!(row.len(), self.n_features);
        self.values.extend_from_slice(row);
        self.labels.push(label);
    }
}

/// Load a comma-delimited, double-quote escaped, UTF-8 CSV with a mandatory
/// header row. The label column must hold exactly two distinct values; the
/// minority value maps to 1 (ties broken toward the lexicographically larger
/// value) and the mapping is recorded on the dataset.
pub fn load_csv(path: &Path, label_name: &str) -> Result<TabularDataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, &e))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_name)
        .ok_or_else(|| Error::MissingLabelColumn(label_name.to_string()))?;

    let column_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let mut seen = HashSet::new();
    for name in headers.iter() {
        if !seen.insert(name.as_str()) {
            return Err(Error::Invalid(format!("duplicate column name '{name}'")));
        }
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let mut row = Vec::with_capacity(column_names.len());
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.to_string());
            } else {
                row.push(cell.to_string());
            }
        }
        rows.push(row);
    }

    let mut distinct: Vec<(String, usize)> = Vec::new();
    for value in &raw_labels {
        match distinct.iter_mut().find(|(v, _)| v == value) {
            Some((_, count)) => *count += 1,
            None => distinct.push((value.clone(), 1)),
        }
    }
    if distinct.len() != 2 {
        return Err(Error::LabelCardinality {
            name: label_name.to_string(),
            count: distinct.len(),
        });
    }
    let positive_first = distinct[0].1 < distinct[1].1
        || (distinct[0].1 == distinct[1].1 && distinct[0].0 > distinct[1].0);
    let (positive, negative) = if positive_first {
        (distinct[0].0.clone(), distinct[1].0.clone())
    } else {
        (distinct[1].0.clone(), distinct[0].0.clone())
    };
    let labels: Vec<u8> = raw_labels
        .iter()
        .map(|v| u8::from(*v == positive))
        .collect();

    let column_kinds = (0..column_names.len())
        .map(|j| infer_kind(rows.iter().map(|r| r[j].as_str())))
        .collect();

    Ok(TabularDataset {
        column_names,
        column_kinds,
        rows,
        label_name: label_name.to_string(),
        labels,
        label_values: [negative, positive],
    })
}

fn csv_error(path: &Path, e: &csv::Error) -> Error {
    if let csv::ErrorKind::UnequalLengths {
        pos,
        expected_len,
        len,
    } = e.kind()
    {
        return Error::RaggedRow {
            row: pos.as_ref().map(|p| p.record()).unwrap_or(0),
            expected: *expected_len as usize,
            found: *len as usize,
        };
    }
    Error::Csv {
        path: path.to_path_buf(),
        record: e.position().map(|p| p.record()).unwrap_or(0),
        message: e.to_string(),
    }
}

fn infer_kind<'a>(cells: impl Iterator<Item = &'a str>) -> ColumnKind {
    let mut any = false;
    let mut all_dates = true;
    let mut all_numeric = true;
    for cell in cells {
        let cell = cell.trim();
        if cell.is_empty() {
            continue;
        }
        any = true;
        if all_dates && parse_date(cell).is_none() {
            all_dates = false;
        }
        if all_numeric && !matches!(cell.parse::<f64>(), Ok(v) if v.is_finite()) {
            all_numeric = false;
        }
        if !all_dates && !all_numeric {
            return ColumnKind::Categorical;
        }
    }
    if !any {
        ColumnKind::Categorical
    } else if all_dates {
        ColumnKind::Date
    } else if all_numeric {
        ColumnKind::Numeric
    } else {
        ColumnKind::Categorical
    }
}

fn parse_date(cell: &str) -> Option<NaiveDate> {
    let bytes = cell.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return None;
    }
    if !bytes
        .iter()
        .enumerate()
        .all(|(i, b)| i == 4 || i == 7 || b.is_ascii_digit())
    {
        return None;
    }
    NaiveDate::parse_from_str(cell, "%Y-%m-%d").ok()
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

fn date_ordinal(date: NaiveDate) -> f64 {
    (date - epoch()).num_days() as f64
}

fn date_from_ordinal(days: i64) -> Option<NaiveDate> {
    epoch().checked_add_signed(chrono::Duration::days(days))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Encode a dataset: categoricals become integer codes in first-appearance
/// order, numerics and date ordinals are min-max scaled into `[0, 1]`, and
/// constant columns scale to 0.
pub fn encode(ds: &TabularDataset) -> EncodedMatrix {
    let n_rows = ds.rows.len();
    let n_features = ds.column_names.len();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n_features);
    let mut encoders: Vec<ColumnEncoder> = Vec::with_capacity(n_features);

    for j in 0..n_features {
        match ds.column_kinds[j] {
            ColumnKind::Categorical => {
                let mut categories: Vec<String> = Vec::new();
                let mut codes = Vec::with_capacity(n_rows);
                for row in &ds.rows {
                    let cell = row[j].trim();
                    let value = if cell.is_empty() {
                        MISSING_CATEGORY
                    } else {
                        cell
                    };
                    let code = match categories.iter().position(|c| c == value) {
                        Some(idx) => idx,
                        None => {
                            categories.push(value.to_string());
                            categories.len() - 1
                        }
                    };
                    codes.push(code as f64);
                }
                let denom = (categories.len().saturating_sub(1)) as f64;
                let scaled = codes
                    .iter()
                    .map(|&c| if denom > 0.0 { c / denom } else { 0.0 })
                    .collect();
                columns.push(scaled);
                encoders.push(ColumnEncoder::Categorical { categories });
            }
            ColumnKind::Numeric | ColumnKind::Date => {
                let is_date = ds.column_kinds[j] == ColumnKind::Date;
                let parse = |cell: &str| -> Option<f64> {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        None
                    } else if is_date {
                        parse_date(cell).map(date_ordinal)
                    } else {
                        cell.parse::<f64>().ok()
                    }
                };
                let raw: Vec<Option<f64>> = ds.rows.iter().map(|r| parse(&r[j])).collect();
                let mut present: Vec<f64> = raw.iter().filter_map(|v| *v).collect();
                present.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
                let fill = median(&present);
                let filled: Vec<f64> = raw.iter().map(|v| v.unwrap_or(fill)).collect();
                let min = filled.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = filled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let range = max - min;
                let scaled = filled
                    .iter()
                    .map(|&v| if range > 0.0 { (v - min) / range } else { 0.0 })
                    .collect();
                columns.push(scaled);
                encoders.push(if is_date {
                    ColumnEncoder::Date { min, max }
                } else {
                    ColumnEncoder::Numeric { min, max }
                });
            }
        }
    }

    let mut values = Vec::with_capacity(n_rows * n_features);
    for i in 0..n_rows {
        for column in columns.iter() {
            values.push(column[i]);
        }
    }
    EncodedMatrix {
        values,
        n_features,
        feature_names: ds.column_names.clone(),
        encoders,
        labels: ds.labels.clone(),
    }
}
