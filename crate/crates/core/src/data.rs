//! Dataset model, CSV ingestion and fold splitting.
//!
//! A [`Dataset`] is stored column-wise (row-major feature matrix plus
//! treatment, outcome and optional prediction vectors). Row index `i` is the
//! identity of an observation everywhere downstream.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{EcethError, Result};
use crate::rng::{child_seed, rng_from, Stream};

/// One unit: covariates, binary treatment, outcome and optionally the CATE
/// prediction being evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub treatment: bool,
    pub outcome: f64,
    pub prediction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    features: Vec<f64>,
    treatment: Vec<bool>,
    outcome: Vec<f64>,
    prediction: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from rows, validating the invariants shared by all
    /// observations.
    pub fn from_observations(
        feature_names: Vec<String>,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(EcethError::EmptyInput);
        }
        let d = feature_names.len();
        let n = observations.len();
        let with_prediction = observations[0].prediction.is_some();
        let mut features = Vec::with_capacity(n * d);
        let mut treatment = Vec::with_capacity(n);
        let mut outcome = Vec::with_capacity(n);
        let mut prediction = Vec::with_capacity(if with_prediction { n } else { 0 });
        for (i, obs) in observations.into_iter().enumerate() {
            if obs.features.len() != d {
                return Err(EcethError::InvalidObservation(format!(
                    "row {i} has {} features, expected {d}",
                    obs.features.len()
                )));
            }
            if !obs.outcome.is_finite() || obs.features.iter().any(|v| !v.is_finite()) {
                return Err(EcethError::InvalidObservation(format!(
                    "row {i} has a non-finite outcome or feature"
                )));
            }
            match (obs.prediction, with_prediction) {
                (Some(p), true) if p.is_finite() => prediction.push(p),
                (None, false) => {}
                _ => {
                    return Err(EcethError::InvalidObservation(format!(
                        "row {i}: predictions must be finite and present on all rows or none"
                    )))
                }
            }
            features.extend_from_slice(&obs.features);
            treatment.push(obs.treatment);
            outcome.push(obs.outcome);
        }
        Ok(Dataset {
            feature_names,
            features,
            treatment,
            outcome,
            prediction: with_prediction.then_some(prediction),
        })
    }

    /// Columnar constructor; `features` is row-major `n × d`.
    pub fn from_columns(
        feature_names: Vec<String>,
        features: Vec<f64>,
        treatment: Vec<bool>,
        outcome: Vec<f64>,
        prediction: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(EcethError::EmptyInput);
        }
        let d = feature_names.len();
        check_len("features", n * d, features.len())?;
        check_len("treatment", n, treatment.len())?;
        if let Some(p) = &prediction {
            check_len("predictions", n, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(EcethError::InvalidObservation(
                    "non-finite prediction".into(),
                ));
            }
        }
        if outcome.iter().chain(features.iter()).any(|v| !v.is_finite()) {
            return Err(EcethError::InvalidObservation(
                "non-finite outcome or feature".into(),
            ));
        }
        Ok(Dataset {
            feature_names,
            features,
            treatment,
            outcome,
            prediction,
        })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Row-major feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn predictions(&self) -> Option<&[f64]> {
        self.prediction.as_deref()
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            features: self.row(i).to_vec(),
            treatment: self.treatment[i],
            outcome: self.outcome[i],
            prediction: self.prediction.as_ref().map(|p| p[i]),
        }
    }

    pub fn treated_count(&self) -> usize {
        self.treatment.iter().filter(|&&w| w).count()
    }

    /// Fails unless both treatment arms are represented.
    pub fn require_both_arms(&self) -> Result<()> {
        let treated = self.treated_count();
        let control = self.len() - treated;
        if treated == 0 || control == 0 {
            return Err(EcethError::DegenerateTreatment { treated, control });
        }
        Ok(())
    }

    /// New dataset made of the given rows, in the given order (duplicates
    /// allowed, as in bootstrap resampling).
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let d = self.dim();
        let mut features = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            feature_names: self.feature_names.clone(),
            features,
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            prediction: self
                .prediction
                .as_ref()
                .map(|p| rows.iter().map(|&i| p[i]).collect()),
        }
    }

    /// Same rows with a different prediction column.
    pub fn with_predictions(mut self, prediction: Vec<f64>) -> Result<Dataset> {
        check_len("predictions", self.len(), prediction.len())?;
        self.prediction = Some(prediction);
        Ok(self)
    }

    /// Writes the dataset as CSV with columns `y, w, <features>, delta`.
    /// Floats use Rust's shortest round-trip formatting, so reloading gives
    /// bit-identical values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| EcethError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = csv::Writer::from_writer(file);
        let mut header = vec!["y".to_string(), "w".to_string()];
        header.extend(self.feature_names.iter().cloned());
        if self.prediction.is_some() {
            header.push("delta".into());
        }
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.outcome[i].to_string(),
                (self.treatment[i] as u8).to_string(),
            ];
            rec.extend(self.row(i).iter().map(f64::to_string));
            if let Some(p) = &self.prediction {
                rec.push(p[i].to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush().map_err(|source| EcethError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(EcethError::Shape {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

/// Which CSV columns play which role. Columns are selected by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub outcome: String,
    pub treatment: String,
    /// `None` selects every column not named elsewhere in the spec.
    pub features: Option<Vec<String>>,
    pub prediction: Option<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            outcome: "y".into(),
            treatment: "w".into(),
            features: None,
            prediction: Some("delta".into()),
        }
    }
}

fn parse_treatment(raw: &str, line: u64) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        t if t.eq_ignore_ascii_case("false") => Ok(false),
        t if t.eq_ignore_ascii_case("true") => Ok(true),
        t => Err(EcethError::InvalidTreatment {
            line,
            value: t.to_string(),
        }),
    }
}

fn parse_number(raw: &str, line: u64, column: &str) -> Result<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return Err(EcethError::MissingValue {
            line,
            column: column.to_string(),
        });
    }
    let v: f64 = t.parse().map_err(|_| EcethError::Parse {
        line,
        column: column.to_string(),
        value: t.to_string(),
    })?;
    if !v.is_finite() {
        return Err(EcethError::NonFinite {
            line,
            column: column.to_string(),
        });
    }
    Ok(v)
}

/// Reads and validates a CSV file with a header row.
pub fn load_csv(path: &Path, spec: &ColumnSpec) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| EcethError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, spec)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(reader: R, spec: &ColumnSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(EcethError::EmptyInput);
    }
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EcethError::MissingColumn(name.to_string()))
    };
    let y_col = find(&spec.outcome)?;
    let w_col = find(&spec.treatment)?;
    let p_col = spec.prediction.as_deref().map(find).transpose()?;
    let feature_names: Vec<String> = match &spec.features {
        Some(names) => names.clone(),
        None => header
            .iter()
            .filter(|h| {
                **h != spec.outcome
                    && **h != spec.treatment
                    && spec.prediction.as_deref() != Some(h.as_str())
            })
            .cloned()
            .collect(),
    };
    let f_cols = feature_names
        .iter()
        .map(|name| find(name))
        .collect::<Result<Vec<_>>>()?;

    let mut features = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut prediction = p_col.map(|_| Vec::new());
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |c: usize| record.get(c).unwrap_or("");
        outcome.push(parse_number(cell(y_col), line, &spec.outcome)?);
        treatment.push(parse_treatment(cell(w_col), line)?);
        for (&c, name) in f_cols.iter().zip(&feature_names) {
            features.push(parse_number(cell(c), line, name)?);
        }
        if let (Some(c), Some(p)) = (p_col, prediction.as_mut()) {
            p.push(parse_number(cell(c), line, header[c].as_str())?);
        }
    }
    if outcome.is_empty() {
        return Err(EcethError::EmptyInput);
    }
    Dataset::from_columns(feature_names, features, treatment, outcome, prediction)
}

/// Per-row fold index in `0..folds`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    folds: usize,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Row indices of fold `j`, ascending.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == j)
            .collect()
    }

    /// Row indices outside fold `j`, ascending.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != j)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Randomly partitions `n` rows into `folds` groups whose sizes differ by at
/// most one. Deterministic in `(n, folds, seed)`.
pub fn split_rows(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 || folds > n {
        return Err(EcethError::InvalidFoldCount { folds, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(child_seed(seed, Stream::Folds, n as u64)));
    let mut fold_of = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % folds;
    }
    Ok(FoldAssignment { folds, fold_of })
}

/// Like [`split_rows`], but over distinct `units`: rows sharing a unit id
/// always land in the same fold.
pub fn split_units(units: &[usize], folds: usize, seed: u64) -> Result<FoldAssignment> {
    let mut distinct = units.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let by_unit = split_rows(distinct.len(), folds, seed)?;
    let fold_of = units
        .iter()
        .map(|u| by_unit.fold_of[distinct.binary_search(u).expect("unit is present")])
        .collect();
    Ok(FoldAssignment { folds, fold_of })
}

pub fn split_folds(dataset: &Dataset, folds: usize, seed: u64) -> Result<FoldAssignment> {
    split_rows(dataset.len(), folds, seed)
}

/// Small helper for writing plain text reports.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|source| EcethError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| EcethError::Io {
        path: path.to_path_buf(),
        source,
    })
}
