//! Tabular datasets: CSV ingestion, categorical codebooks and the seeded
//! analysis/validation split.

use std::collections::{BTreeMap, HashMap};
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::expr::{Env, Value};

/// Default fraction of rows placed in the analysis subset.
pub const DEFAULT_SPLIT: f64 = 2.0 / 3.0;

const MISSING: [&str; 4] = ["", "?", "NA", "N/A"];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("the data file has no rows")]
    Empty,
    #[error("no column named `{0}`")]
    MissingColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: `{value}` in numeric column `{column}` is not a number")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("split fraction must lie in [0, 1], got {0}")]
    BadSplit(f64),
}

/// How to read a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub protected: String,
    /// Column holding ground-truth labels, if any.
    #[serde(default)]
    pub label: Option<String>,
    /// Columns coded as categories even when every value parses as a number.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Columns that must be numeric; a non-numeric value is an error.
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub allow_explicit_use: bool,
}

fn default_split() -> f64 {
    DEFAULT_SPLIT
}

impl LoadOptions {
    pub fn new(protected: &str) -> LoadOptions {
        LoadOptions {
            protected: protected.to_string(),
            label: None,
            categorical: Vec::new(),
            numeric: Vec::new(),
            split: DEFAULT_SPLIT,
            seed: 0,
            allow_explicit_use: false,
        }
    }
}

/// Where a session's dataset comes from, recorded in checkpoints so a
/// session can be resumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Inline CSV text, used when no path is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    pub options: LoadOptions,
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset, DataError> {
        match (&self.path, &self.csv) {
            (Some(p), _) => Dataset::load(p, &self.options),
            (None, Some(text)) => Dataset::parse_csv(text, &self.options),
            (None, None) => Err(DataError::Empty),
        }
    }
}

/// Category levels per column, in first-seen order. Level `i` is coded `i`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook(pub BTreeMap<String, Vec<String>>);

impl Codebook {
    pub fn levels(&self, column: &str) -> Option<&[String]> {
        self.0.get(column).map(|v| v.as_slice())
    }

    pub fn code(&self, column: &str, level: &str) -> Option<f64> {
        self.levels(column)?
            .iter()
            .position(|l| l == level)
            .map(|i| i as f64)
    }

    pub fn level(&self, column: &str, code: f64) -> Option<&str> {
        if code < 0.0 || code.fract() != 0.0 {
            return None;
        }
        self.levels(column)?.get(code as usize).map(|s| s.as_str())
    }

    pub fn is_categorical(&self, column: &str) -> bool {
        self.0.contains_key(column)
    }
}

/// A population sample. Every cell is numeric; categorical columns hold
/// their codebook codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<Vec<f64>>,
    codebook: Codebook,
    protected: String,
    label: Option<String>,
    analysis: Vec<usize>,
    validation: Vec<usize>,
    allow_explicit_use: bool,
    provenance: String,
}

impl Dataset {
    /// In-memory dataset with every row in the analysis subset.
    pub fn new(
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
        protected: &str,
    ) -> Result<Dataset, DataError> {
        let mut index = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(DataError::DuplicateColumn(c.clone()));
            }
        }
        if !index.contains_key(protected) {
            return Err(DataError::MissingColumn(protected.to_string()));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(DataError::Ragged {
                    row: r,
                    expected: columns.len(),
                    found: row.len(),
                });
            }
        }
        let n = rows.len();
        Ok(Dataset {
            columns,
            index,
            rows,
            codebook: Codebook::default(),
            protected: protected.to_string(),
            label: None,
            analysis: (0..n).collect(),
            validation: Vec::new(),
            allow_explicit_use: false,
            provenance: "in-memory".into(),
        })
    }

    pub fn with_codebook(mut self, codebook: Codebook) -> Dataset {
        self.codebook = codebook;
        self
    }

    pub fn with_label(mut self, label: &str) -> Result<Dataset, DataError> {
        if !self.index.contains_key(label) {
            return Err(DataError::MissingColumn(label.to_string()));
        }
        self.label = Some(label.to_string());
        Ok(self)
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Dataset {
        self.provenance = note.into();
        self
    }

    pub fn allowing_explicit_use(mut self, allow: bool) -> Dataset {
        self.allow_explicit_use = allow;
        self
    }

    /// Seeded shuffle, then the first `fraction` of rows become the
    /// analysis subset. Both index lists are stored sorted.
    pub fn split(mut self, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(DataError::BadSplit(fraction));
        }
        let n = self.rows.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = (fraction * n as f64).round() as usize;
        let mut analysis = order[..k].to_vec();
        let mut validation = order[k..].to_vec();
        analysis.sort_unstable();
        validation.sort_unstable();
        self.analysis = analysis;
        self.validation = validation;
        Ok(self)
    }

    pub fn load(path: impl AsRef<FsPath>, opts: &LoadOptions) -> Result<Dataset, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Dataset::parse_csv(&text, opts)?.with_provenance(path.display().to_string()))
    }

    pub fn parse_csv(text: &str, opts: &LoadOptions) -> Result<Dataset, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut raw: Vec<Vec<String>> = Vec::new();
        for (r, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != columns.len() {
                return Err(DataError::Ragged {
                    row: r,
                    expected: columns.len(),
                    found: rec.len(),
                });
            }
            for (c, field) in rec.iter().enumerate() {
                if MISSING.contains(&field) {
                    return Err(DataError::MissingValue {
                        row: r,
                        column: columns[c].clone(),
                    });
                }
            }
            raw.push(rec.iter().map(str::to_string).collect());
        }
        if raw.is_empty() {
            return Err(DataError::Empty);
        }
        for c in opts.categorical.iter().chain(&opts.numeric) {
            if !columns.contains(c) {
                return Err(DataError::MissingColumn(c.clone()));
            }
        }

        let mut codebook = Codebook::default();
        let mut rows = vec![vec![0.0; columns.len()]; raw.len()];
        for (c, name) in columns.iter().enumerate() {
            if opts.numeric.contains(name) {
                if let Some((r, row)) = raw.iter().enumerate().find(|(_, row)| parse_number(&row[c]).is_none()) {
                    return Err(DataError::NotNumeric {
                        row: r,
                        column: name.clone(),
                        value: row[c].clone(),
                    });
                }
            }
            let numeric = !opts.categorical.contains(name)
                && raw.iter().all(|r| parse_number(&r[c]).is_some());
            if numeric {
                for (r, row) in raw.iter().enumerate() {
                    rows[r][c] = parse_number(&row[c]).expect("checked above");
                }
                continue;
            }
            let mut levels: Vec<String> = Vec::new();
            let mut seen: HashMap<&str, usize> = HashMap::new();
            for (r, row) in raw.iter().enumerate() {
                let code = *seen.entry(row[c].as_str()).or_insert_with(|| {
                    levels.push(row[c].clone());
                    levels.len() - 1
                });
                rows[r][c] = code as f64;
            }
            codebook.0.insert(name.clone(), levels);
        }

        let mut ds = Dataset::new(columns, rows, &opts.protected)?
            .with_codebook(codebook)
            .allowing_explicit_use(opts.allow_explicit_use);
        if let Some(l) = &opts.label {
            ds = ds.with_label(l)?;
        }
        ds.split(opts.split, opts.seed)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn value(&self, row: usize, column: &str) -> Option<f64> {
        self.column_index(column).map(|c| self.rows[row][c])
    }

    /// A column's values at the given rows.
    pub fn column_at(&self, column: &str, rows: &[usize]) -> Result<Vec<f64>, DataError> {
        let c = self
            .column_index(column)
            .ok_or_else(|| DataError::MissingColumn(column.to_string()))?;
        Ok(rows.iter().map(|&r| self.rows[r][c]).collect())
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn protected(&self) -> &str {
        &self.protected
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn analysis(&self) -> &[usize] {
        &self.analysis
    }

    pub fn validation(&self) -> &[usize] {
        &self.validation
    }

    pub fn allow_explicit_use(&self) -> bool {
        self.allow_explicit_use
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Columns a model may read: everything but the protected column (unless
    /// explicit use is allowed) and the label.
    pub fn feature_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .map(|s| s.as_str())
            .filter(|c| self.allow_explicit_use || *c != self.protected)
            .filter(|c| Some(*c) != self.label.as_deref())
            .collect()
    }

    pub fn row_env(&self, row: usize) -> RowEnv<'_> {
        RowEnv { data: self, row }
    }

    /// Adds a derived column computed from each row.
    pub fn with_derived_column(
        mut self,
        name: &str,
        f: impl Fn(&RowEnv<'_>) -> f64,
    ) -> Result<Dataset, DataError> {
        if self.index.contains_key(name) {
            return Err(DataError::DuplicateColumn(name.to_string()));
        }
        let values: Vec<f64> = (0..self.rows.len()).map(|r| f(&self.row_env(r))).collect();
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.push(v);
        }
        self.index.insert(name.to_string(), self.columns.len());
        self.columns.push(name.to_string());
        Ok(self)
    }

    /// Re-designates the protected column.
    pub fn with_protected(mut self, name: &str) -> Result<Dataset, DataError> {
        if !self.index.contains_key(name) {
            return Err(DataError::MissingColumn(name.to_string()));
        }
        self.protected = name.to_string();
        Ok(self)
    }

    /// SHA-256 over the columns, cell bits, protected column and split.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        for row in &self.rows {
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.update(self.protected.as_bytes());
        h.update([0u8]);
        for i in &self.analysis {
            h.update((*i as u64).to_le_bytes());
        }
        h.update([1u8]);
        for i in &self.validation {
            h.update((*i as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// One dataset row viewed as an evaluation environment.
#[derive(Clone, Copy)]
pub struct RowEnv<'a> {
    data: &'a Dataset,
    row: usize,
}

impl RowEnv<'_> {
    pub fn num(&self, column: &str) -> Option<f64> {
        self.data.value(self.row, column)
    }
}

impl Env for RowEnv<'_> {
    fn get(&self, name: &str) -> Option<Value> {
        self.num(name).map(Value::Num)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "zip,income,race\nb1,3.5,B\nw1,2.0,W\nb1,1.0,B\n";

    #[test]
    fn full_split_puts_everything_in_analysis() {
        let mut o = LoadOptions::new("race");
        o.split = 1.0;
        let ds = Dataset::parse_csv(SMALL, &o).unwrap();
        assert_eq!(ds.analysis(), &[0, 1, 2]);
        assert!(ds.validation().is_empty());
        assert_eq!(ds.codebook().levels("zip").unwrap(), ["b1", "w1"]);
        assert_eq!(ds.value(1, "zip"), Some(1.0));
        assert!(!ds.codebook().is_categorical("income"));
    }

    #[test]
    fn same_seed_same_split() {
        let text: String = std::iter::once("a,z\n".to_string())
            .chain((0..50).map(|i| format!("{i},{}\n", i % 2)))
            .collect();
        let o = LoadOptions::new("z");
        let a = Dataset::parse_csv(&text, &o).unwrap();
        let b = Dataset::parse_csv(&text, &o).unwrap();
        assert_eq!(a.analysis(), b.analysis());
        assert_eq!(a.analysis().len(), 33);
        assert_eq!(a.digest(), b.digest());
        let mut all: Vec<usize> = a.analysis().iter().chain(a.validation()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_input() {
        let o = LoadOptions::new("race");
        assert!(matches!(
            Dataset::parse_csv("zip,race\n", &o),
            Err(DataError::Empty)
        ));
        assert!(matches!(
            Dataset::parse_csv("zip,race\n?,W\n", &o),
            Err(DataError::MissingValue { .. })
        ));
        let mut num = LoadOptions::new("race");
        num.numeric.push("zip".into());
        assert!(matches!(
            Dataset::parse_csv("zip,race\n1,W\nx,B\n", &num),
            Err(DataError::NotNumeric { row: 1, .. })
        ));
        assert!(matches!(
            Dataset::parse_csv("zip,sex\n1,W\n", &o),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn protected_column_is_not_a_feature_by_default() {
        let ds = Dataset::parse_csv(SMALL, &LoadOptions::new("race")).unwrap();
        assert_eq!(ds.feature_columns(), ["zip", "income"]);
        let ds = ds.allowing_explicit_use(true);
        assert_eq!(ds.feature_columns(), ["zip", "income", "race"]);
    }
}
