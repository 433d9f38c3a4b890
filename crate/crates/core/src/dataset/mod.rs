//! Codebook-annotated survey data: the variable dictionary, subject rows with
//! per-subject sampling weights, and cohort filtering.
//!
//! Data files are comma-separated with a header row of variable ids. The
//! dictionary is a JSON list of [`VariableDef`] objects. Any of `""`, `"."`
//! or `"NA"` in a data cell is read as missing.

mod cohort;
mod synthetic;

pub use cohort::{apply_cohort, Clause, ClauseValue, CohortFilter, Comparator};
pub use synthetic::{
    generate_synthetic, CadreSpec, ExposureDef, GroundTruth, OutcomeKind, OutcomeSpec,
    OversampleSpec, SyntheticData, SyntheticSpec,
};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Column holding NHANES-style respondent sequence numbers. When present it
/// supplies the subject identifiers.
pub const SUBJECT_ID_VAR: &str = "SEQN";

const MISSING_MARKERS: [&str; 3] = ["", ".", "NA"];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DatasetError {
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid code {value} for variable `{var}` at row {row}")]
    InvalidCode { row: usize, var: String, value: String },
    #[error("missing or invalid survey weights: {0}")]
    MissingWeights(String),
    #[error("invalid dictionary entry `{var}`: {reason}")]
    InvalidDictionary { var: String, reason: String },
    #[error("comparator `{op}` cannot be applied to non-continuous variable `{var}`")]
    TypeMismatch { var: String, op: String },
    #[error("invalid cohort filter: {0}")]
    InvalidFilter(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::MalformedFile { .. } => "MalformedFile",
            DatasetError::UnknownVariable(_) => "UnknownVariable",
            DatasetError::InvalidCode { .. } => "InvalidCode",
            DatasetError::MissingWeights(_) => "MissingWeights",
            DatasetError::InvalidDictionary { .. } => "InvalidDictionary",
            DatasetError::TypeMismatch { .. } => "TypeMismatch",
            DatasetError::InvalidFilter(_) => "InvalidFilter",
            DatasetError::InvalidSpec(_) => "InvalidSpec",
            DatasetError::Io { .. } => "Io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarCategory {
    Exposure,
    Lifestyle,
    Demographic,
    Outcome,
    Weight,
    Laboratory,
}

/// One entry of the variable dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDef {
    pub id: String,
    pub label: String,
    pub kind: VarKind,
    #[serde(default)]
    pub unit: String,
    /// Code string -> category label. Categorical variables only (binary
    /// variables may optionally label their 0/1 codes).
    #[serde(default)]
    pub codebook: BTreeMap<String, String>,
    #[serde(default)]
    pub ontology_term: Option<String>,
    pub category: VarCategory,
}

impl VariableDef {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |reason: &str| {
            Err(DatasetError::InvalidDictionary { var: self.id.clone(), reason: reason.to_string() })
        };
        if self.id.trim().is_empty() {
            return bad("empty id");
        }
        match self.kind {
            VarKind::Categorical if self.codebook.len() < 2 => {
                return bad("categorical variables need at least two codebook entries")
            }
            VarKind::Continuous if !self.codebook.is_empty() => {
                return bad("continuous variables must have an empty codebook")
            }
            _ => {}
        }
        for code in self.codebook.keys() {
            if code.trim().parse::<f64>().is_err() {
                return bad(&format!("codebook key `{code}` is not numeric"));
            }
        }
        Ok(())
    }

    /// Numeric codes of the codebook, in ascending order.
    pub fn codes(&self) -> Vec<f64> {
        let mut codes: Vec<f64> =
            self.codebook.keys().filter_map(|c| c.trim().parse::<f64>().ok()).collect();
        codes.sort_by(f64::total_cmp);
        codes
    }

    fn accepts(&self, value: f64) -> bool {
        match self.kind {
            VarKind::Continuous => value.is_finite(),
            VarKind::Categorical => self.codes().contains(&value),
            VarKind::Binary if self.codebook.is_empty() => value == 0.0 || value == 1.0,
            VarKind::Binary => self.codes().contains(&value),
        }
    }

    /// Label for a code, if the codebook defines one.
    pub fn code_label(&self, code: f64) -> Option<&str> {
        self.codebook
            .iter()
            .find(|(k, _)| k.trim().parse::<f64>().ok() == Some(code))
            .map(|(_, v)| v.as_str())
    }
}

/// Tabular survey extract. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dictionary: Vec<VariableDef>,
    rows: Vec<Vec<Option<f64>>>,
    subject_ids: Vec<String>,
    weight_var: String,
    index: HashMap<String, usize>,
}

impl Dataset {
    /// Builds a dataset, checking every invariant: unique ids, row width,
    /// codebook membership and strictly positive finite weights.
    pub fn new(
        dictionary: Vec<VariableDef>,
        rows: Vec<Vec<Option<f64>>>,
        subject_ids: Vec<String>,
        weight_var: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        let weight_var = weight_var.into();
        let mut index = HashMap::with_capacity(dictionary.len());
        for (j, var) in dictionary.iter().enumerate() {
            var.validate()?;
            if index.insert(var.id.clone(), j).is_some() {
                return Err(DatasetError::InvalidDictionary {
                    var: var.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
        }
        if subject_ids.len() != rows.len() {
            return Err(DatasetError::MalformedFile {
                path: "<memory>".into(),
                reason: format!("{} subject ids for {} rows", subject_ids.len(), rows.len()),
            });
        }
        let w = *index.get(&weight_var).ok_or_else(|| {
            DatasetError::MissingWeights(format!("weight variable `{weight_var}` not in dictionary"))
        })?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dictionary.len() {
                return Err(DatasetError::MalformedFile {
                    path: "<memory>".into(),
                    reason: format!("row {} has {} cells, expected {}", i + 1, row.len(), dictionary.len()),
                });
            }
            for (var, cell) in dictionary.iter().zip(row) {
                if let Some(v) = cell {
                    if !var.accepts(*v) {
                        return Err(DatasetError::InvalidCode {
                            row: i + 1,
                            var: var.id.clone(),
                            value: v.to_string(),
                        });
                    }
                }
            }
            match row[w] {
                Some(v) if v.is_finite() && v > 0.0 => {}
                other => {
                    return Err(DatasetError::MissingWeights(format!(
                        "row {} has weight {:?}",
                        i + 1,
                        other
                    )))
                }
            }
        }
        Ok(Self { dictionary, rows, subject_ids, weight_var, index })
    }

    pub fn dictionary(&self) -> &[VariableDef] {
        &self.dictionary
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn weight_var(&self) -> &str {
        &self.weight_var
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn variable(&self, id: &str) -> Option<&VariableDef> {
        self.column_index(id).map(|j| &self.dictionary[j])
    }

    /// Column values, `None` for missing cells.
    pub fn column(&self, id: &str) -> Option<Vec<Option<f64>>> {
        let j = self.column_index(id)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn weights(&self) -> Vec<f64> {
        let j = self.index[&self.weight_var];
        self.rows.iter().map(|r| r[j].expect("weights validated at construction")).collect()
    }

    pub fn value(&self, row: usize, id: &str) -> Option<f64> {
        self.column_index(id).and_then(|j| self.rows[row][j])
    }

    /// Returns a dataset holding only the given rows, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Dataset {
        Dataset {
            dictionary: self.dictionary.clone(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            subject_ids: keep.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            weight_var: self.weight_var.clone(),
            index: self.index.clone(),
        }
    }

    /// Hex SHA-256 over the canonical dictionary, the row count and one
    /// checksum per column.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let dict = serde_json::to_string(&serde_json::to_value(&self.dictionary).expect("dictionary serializes"))
            .expect("dictionary serializes");
        hasher.update(dict.as_bytes());
        hasher.update((self.rows.len() as u64).to_le_bytes());
        for j in 0..self.dictionary.len() {
            let mut col = Sha256::new();
            for (row, id) in self.rows.iter().zip(&self.subject_ids) {
                col.update(id.as_bytes());
                match row[j] {
                    Some(v) => {
                        col.update([1u8]);
                        col.update(v.to_bits().to_le_bytes());
                    }
                    None => col.update([0u8]),
                }
            }
            hasher.update(col.finalize());
        }
        hex::encode(hasher.finalize())
    }

    /// Serializes the rows as CSV text with a header of variable ids.
    pub fn to_csv(&self) -> String {
        let mut out = self.dictionary.iter().map(|v| v.id.as_str()).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> =
                row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn dictionary_json(&self) -> String {
        serde_json::to_string_pretty(&self.dictionary).expect("dictionary serializes")
    }

    /// Writes the CSV and dictionary files.
    pub fn write(&self, data_path: &Path, dictionary_path: &Path) -> Result<(), DatasetError> {
        write_file(data_path, &self.to_csv())?;
        write_file(dictionary_path, &self.dictionary_json())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), DatasetError> {
    fs::write(path, text)
        .map_err(|e| DatasetError::Io { path: path.display().to_string(), reason: e.to_string() })
}

fn read_file(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path)
        .map_err(|e| DatasetError::Io { path: path.display().to_string(), reason: e.to_string() })
}

/// Parses a dictionary document.
pub fn parse_dictionary(text: &str) -> Result<Vec<VariableDef>, DatasetError> {
    let dict: Vec<VariableDef> = serde_json::from_str(text).map_err(|e| DatasetError::MalformedFile {
        path: "<dictionary>".into(),
        reason: e.to_string(),
    })?;
    for v in &dict {
        v.validate()?;
    }
    Ok(dict)
}

/// Loads a CSV extract and its dictionary from disk.
pub fn load_dataset(data_path: &Path, dictionary_path: &Path) -> Result<Dataset, DatasetError> {
    let dict_text = read_file(dictionary_path)?;
    let dictionary = parse_dictionary(&dict_text).map_err(|e| match e {
        DatasetError::MalformedFile { reason, .. } => {
            DatasetError::MalformedFile { path: dictionary_path.display().to_string(), reason }
        }
        other => other,
    })?;
    let data = read_file(data_path)?;
    parse_dataset(&data, dictionary).map_err(|e| match e {
        DatasetError::MalformedFile { reason, .. } => {
            DatasetError::MalformedFile { path: data_path.display().to_string(), reason }
        }
        other => other,
    })
}

/// Decodes CSV text against a dictionary. The resulting dataset's dictionary
/// holds the data columns in file order.
///
/// Subject ids come from the `SEQN` column when present, otherwise from
/// 1-based row numbers. The survey weight is the first column whose
/// dictionary category is `weight`.
pub fn parse_dataset(csv_text: &str, dictionary: Vec<VariableDef>) -> Result<Dataset, DatasetError> {
    let malformed =
        |reason: String| DatasetError::MalformedFile { path: "<data>".into(), reason };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(csv_text.as_bytes());
    let header: Vec<String> =
        reader.headers().map_err(|e| malformed(e.to_string()))?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(malformed("missing header row".into()));
    }
    let by_id: HashMap<&str, &VariableDef> = dictionary.iter().map(|v| (v.id.as_str(), v)).collect();
    let mut defs = Vec::with_capacity(header.len());
    for h in &header {
        let def = by_id.get(h.as_str()).ok_or_else(|| DatasetError::UnknownVariable(h.clone()))?;
        defs.push((*def).clone());
    }
    let weight_var = defs
        .iter()
        .find(|d| d.category == VarCategory::Weight)
        .map(|d| d.id.clone())
        .ok_or_else(|| DatasetError::MissingWeights("no weight column in data".into()))?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if record.len() != defs.len() {
            return Err(malformed(format!("row {} has {} cells, expected {}", i + 1, record.len(), defs.len())));
        }
        let mut row = Vec::with_capacity(defs.len());
        for (cell, def) in record.iter().zip(&defs) {
            if MISSING_MARKERS.contains(&cell) {
                row.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| match def.kind {
                VarKind::Continuous => {
                    malformed(format!("row {}: `{}` is not numeric in column {}", i + 1, cell, def.id))
                }
                _ => DatasetError::InvalidCode { row: i + 1, var: def.id.clone(), value: cell.to_string() },
            })?;
            if !def.accepts(v) {
                if def.kind == VarKind::Continuous {
                    return Err(malformed(format!("row {}: non-finite value in column {}", i + 1, def.id)));
                }
                return Err(DatasetError::InvalidCode { row: i + 1, var: def.id.clone(), value: cell.to_string() });
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    let id_col = defs.iter().position(|d| d.id == SUBJECT_ID_VAR);
    let subject_ids = rows
        .iter()
        .enumerate()
        .map(|(i, r)| match id_col.and_then(|j| r[j]) {
            Some(v) => v.to_string(),
            None => (i + 1).to_string(),
        })
        .collect();
    Dataset::new(defs, rows, subject_ids, weight_var)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_dictionary() -> Vec<VariableDef> {
        serde_json::from_str(
            r#"[
            {"id":"SEQN","label":"Respondent sequence number","kind":"continuous","unit":"","codebook":{},"ontology_term":null,"category":"demographic"},
            {"id":"RIDAGEYR","label":"Age","kind":"continuous","unit":"years","codebook":{},"ontology_term":null,"category":"demographic"},
            {"id":"WTMEC","label":"Exam weight","kind":"continuous","unit":"","codebook":{},"ontology_term":null,"category":"weight"},
            {"id":"LBXGLU","label":"Fasting glucose","kind":"continuous","unit":"mg/dL","codebook":{},"ontology_term":null,"category":"laboratory"},
            {"id":"RIAGENDR","label":"Gender","kind":"categorical","unit":"","codebook":{"1":"Male","2":"Female","7":"Refused"},"ontology_term":null,"category":"demographic"}
            ]"#,
        )
        .unwrap()
    }

    #[test]
    fn loads_three_row_file() {
        let csv = "SEQN,RIDAGEYR,WTMEC,LBXGLU\n1,34,1000.5,99\n2,61,2000,.\n3,45,1500,NA\n";
        let ds = parse_dataset(csv, small_dictionary()).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.dictionary().len(), 4);
        assert_eq!(ds.weight_var(), "WTMEC");
        assert_eq!(ds.subject_ids(), ["1", "2", "3"]);
        assert_eq!(ds.column("LBXGLU").unwrap(), vec![Some(99.0), None, None]);
    }

    #[test]
    fn rejects_code_outside_codebook() {
        let csv = "SEQN,WTMEC,RIAGENDR\n1,10,1\n2,10,9\n";
        let err = parse_dataset(csv, small_dictionary()).unwrap_err();
        assert_eq!(err, DatasetError::InvalidCode { row: 2, var: "RIAGENDR".into(), value: "9".into() });
    }

    #[test]
    fn rejects_unknown_column() {
        let csv = "SEQN,WTMEC,BOGUS\n1,10,1\n";
        assert_eq!(parse_dataset(csv, small_dictionary()).unwrap_err(), DatasetError::UnknownVariable("BOGUS".into()));
    }

    #[test]
    fn weights_must_be_present_and_positive() {
        let no_weight = "SEQN,RIDAGEYR\n1,30\n";
        assert!(matches!(parse_dataset(no_weight, small_dictionary()), Err(DatasetError::MissingWeights(_))));
        let zero = "SEQN,WTMEC\n1,0\n";
        assert!(matches!(parse_dataset(zero, small_dictionary()), Err(DatasetError::MissingWeights(_))));
        let missing = "SEQN,WTMEC\n1,\n";
        assert!(matches!(parse_dataset(missing, small_dictionary()), Err(DatasetError::MissingWeights(_))));
    }

    #[test]
    fn non_numeric_continuous_is_malformed() {
        let csv = "SEQN,WTMEC,LBXGLU\n1,10,abc\n";
        assert!(matches!(parse_dataset(csv, small_dictionary()), Err(DatasetError::MalformedFile { .. })));
    }

    #[test]
    fn dictionary_invariants() {
        let mut d = small_dictionary();
        d[4].codebook.retain(|k, _| k == "1");
        assert!(d[4].validate().is_err());
        let mut c = small_dictionary();
        c[1].codebook.insert("1".into(), "x".into());
        assert!(c[1].validate().is_err());
        let json = r#"[{"id":"A","label":"a","kind":"continuous","unit":"","codebook":{},"ontology_term":null,"category":"weight","extra":1}]"#;
        assert!(parse_dictionary(json).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let csv = "SEQN,RIDAGEYR,WTMEC\n1,34,10\n2,61,20\n";
        let a = parse_dataset(csv, small_dictionary()).unwrap();
        let b = parse_dataset(csv, small_dictionary()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = parse_dataset("SEQN,RIDAGEYR,WTMEC\n1,34,10\n2,62,20\n", small_dictionary()).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
