//! Trial data model, CSV ingestion, dummy encoding and train/test splitting.
//!
//! A [`TrialDataset`] holds raw covariates (continuous or categorical), the
//! binary treatment `A`, the binary outcome `Y` (1 = desirable), optional
//! center labels and the randomization probability. Models never see it
//! directly: an [`Encoder`] fitted on the training part turns it into a
//! [`DesignMatrix`], and [`EncodedTrial`] bundles that matrix with `A` and `Y`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ItrError, Result};

/// Cell contents treated as missing at ingestion.
const MISSING: [&str; 5] = ["", "NA", "NaN", "nan", "."];

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValues {
    Continuous(Vec<f64>),
    /// `levels` is in file order of first appearance; `codes` index into it.
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: CovariateValues,
}

impl Covariate {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Covariate { name: name.into(), values: CovariateValues::Continuous(values) }
    }

    /// Builds a categorical column from raw labels, recording levels in order of appearance.
    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, u32> = HashMap::new();
        let codes = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *lookup.entry(l.to_string()).or_insert_with(|| {
                    levels.push(l.to_string());
                    (levels.len() - 1) as u32
                })
            })
            .collect();
        Covariate { name: name.into(), values: CovariateValues::Categorical { levels, codes } }
    }

    pub fn len(&self) -> usize {
        match &self.values {
            CovariateValues::Continuous(v) => v.len(),
            CovariateValues::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.values, CovariateValues::Categorical { .. })
    }

    /// Row label as text (categorical level, or the number formatted).
    pub fn label(&self, row: usize) -> String {
        match &self.values {
            CovariateValues::Continuous(v) => v[row].to_string(),
            CovariateValues::Categorical { levels, codes } => levels[codes[row] as usize].clone(),
        }
    }

    fn subset(&self, idx: &[usize]) -> Covariate {
        let values = match &self.values {
            CovariateValues::Continuous(v) => CovariateValues::Continuous(idx.iter().map(|&i| v[i]).collect()),
            CovariateValues::Categorical { levels, codes } => CovariateValues::Categorical {
                levels: levels.clone(),
                codes: idx.iter().map(|&i| codes[i]).collect(),
            },
        };
        Covariate { name: self.name.clone(), values }
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub center: Option<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
}

impl Schema {
    /// Every column name the schema references, in role order.
    pub fn referenced_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.treatment.as_str(), self.outcome.as_str()];
        cols.extend(self.center.as_deref());
        cols.extend(self.continuous.iter().map(String::as_str));
        cols.extend(self.categorical.iter().map(String::as_str));
        cols
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.referenced_columns();
        for (i, c) in cols.iter().enumerate() {
            if cols[..i].contains(c) {
                return Err(ItrError::Schema(format!("column `{c}` assigned more than one role")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub covariates: Vec<Covariate>,
    pub treatment: Vec<u8>,
    pub outcome: Vec<u8>,
    pub center: Option<Vec<String>>,
    /// Randomization probability, fixed by design.
    pub propensity: f64,
    /// Rows removed at ingestion because of missing entries.
    pub dropped_rows: usize,
}

impl TrialDataset {
    pub fn new(
        covariates: Vec<Covariate>,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
        center: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = treatment.len();
        if outcome.len() != n {
            return Err(ItrError::LengthMismatch { left: n, right: outcome.len() });
        }
        for c in &covariates {
            if c.len() != n {
                return Err(ItrError::Schema(format!("covariate `{}` has {} rows, expected {n}", c.name, c.len())));
            }
        }
        if let Some(centers) = &center {
            if centers.len() != n {
                return Err(ItrError::LengthMismatch { left: n, right: centers.len() });
            }
        }
        if let Some(row) = treatment.iter().position(|&a| a > 1) {
            return Err(ItrError::NotBinary {
                role: "treatment",
                column: "A".into(),
                row,
                value: treatment[row].to_string(),
            });
        }
        if let Some(row) = outcome.iter().position(|&y| y > 1) {
            return Err(ItrError::NotBinary { role: "outcome", column: "Y".into(), row, value: outcome[row].to_string() });
        }
        if n == 0 {
            return Err(ItrError::EmptyDataset { dropped: 0 });
        }
        Ok(TrialDataset { covariates, treatment, outcome, center, propensity: 0.5, dropped_rows: 0 })
    }

    pub fn with_propensity(mut self, propensity: f64) -> Result<Self> {
        if !(propensity > 0.0 && propensity < 1.0) {
            return Err(ItrError::Config(format!("propensity must lie in (0,1), got {propensity}")));
        }
        self.propensity = propensity;
        Ok(self)
    }

    pub fn n_patients(&self) -> usize {
        self.treatment.len()
    }

    pub fn subset(&self, idx: &[usize]) -> TrialDataset {
        TrialDataset {
            covariates: self.covariates.iter().map(|c| c.subset(idx)).collect(),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            outcome: idx.iter().map(|&i| self.outcome[i]).collect(),
            center: self.center.as_ref().map(|c| idx.iter().map(|&i| c[i].clone()).collect()),
            propensity: self.propensity,
            dropped_rows: self.dropped_rows,
        }
    }

    /// Writes the dataset back out with columns `covariates..., A, Y[, center]`.
    pub fn write_csv(&self, path: &Path, treatment_col: &str, outcome_col: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.covariates.iter().map(|c| c.name.as_str()).collect();
        header.push(treatment_col);
        header.push(outcome_col);
        if self.center.is_some() {
            header.push("center");
        }
        w.write_record(&header)?;
        for i in 0..self.n_patients() {
            let mut row: Vec<String> = self.covariates.iter().map(|c| c.label(i)).collect();
            row.push(self.treatment[i].to_string());
            row.push(self.outcome[i].to_string());
            if let Some(c) = &self.center {
                row.push(c[i].clone());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|source| ItrError::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }
}

fn parse_binary(raw: &str, role: &'static str, column: &str, row: usize) -> Result<u8> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(ItrError::NotBinary { role, column: column.to_string(), row, value: raw.to_string() }),
    }
}

fn is_missing(raw: &str) -> bool {
    MISSING.contains(&raw.trim())
}

/// Reads an RFC-4180 CSV with a header row. Rows with a missing entry in any
/// schema column are dropped and counted in `dropped_rows`.
pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<TrialDataset> {
    schema.validate()?;
    let file = std::fs::File::open(path).map_err(|source| ItrError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ItrError::Schema(format!("column `{name}` not found in {}", path.display())))
    };
    let a_pos = position(&schema.treatment)?;
    let y_pos = position(&schema.outcome)?;
    let center_pos = schema.center.as_deref().map(position).transpose()?;
    let cont_pos = schema.continuous.iter().map(|c| position(c)).collect::<Result<Vec<_>>>()?;
    let cat_pos = schema.categorical.iter().map(|c| position(c)).collect::<Result<Vec<_>>>()?;

    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut centers = Vec::new();
    let mut cont: Vec<Vec<f64>> = vec![Vec::new(); cont_pos.len()];
    let mut cat: Vec<Vec<String>> = vec![Vec::new(); cat_pos.len()];
    let mut dropped = 0usize;

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let used = [a_pos, y_pos].into_iter().chain(center_pos).chain(cont_pos.iter().copied()).chain(cat_pos.iter().copied());
        if used.clone().any(|p| record.get(p).is_none_or(is_missing)) {
            dropped += 1;
            continue;
        }
        let mut parsed_cont = Vec::with_capacity(cont_pos.len());
        for (k, &p) in cont_pos.iter().enumerate() {
            let raw = &record[p];
            let v: f64 = raw.trim().parse().map_err(|_| {
                ItrError::Schema(format!("column `{}` row {row}: {raw:?} is not a number", schema.continuous[k]))
            })?;
            parsed_cont.push(v);
        }
        treatment.push(parse_binary(&record[a_pos], "treatment", &schema.treatment, row)?);
        outcome.push(parse_binary(&record[y_pos], "outcome", &schema.outcome, row)?);
        if let Some(p) = center_pos {
            centers.push(record[p].trim().to_string());
        }
        for (k, v) in parsed_cont.into_iter().enumerate() {
            cont[k].push(v);
        }
        for (k, &p) in cat_pos.iter().enumerate() {
            cat[k].push(record[p].trim().to_string());
        }
    }
    if treatment.is_empty() {
        return Err(ItrError::EmptyDataset { dropped });
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} rows with missing entries", path.display());
    }

    let mut covariates = Vec::with_capacity(cont.len() + cat.len());
    for (name, values) in schema.continuous.iter().zip(cont) {
        covariates.push(Covariate::continuous(name.clone(), values));
    }
    for (name, labels) in schema.categorical.iter().zip(cat) {
        covariates.push(Covariate::categorical(name.clone(), &labels));
    }
    let center = schema.center.as_ref().map(|_| centers);
    let mut data = TrialDataset::new(covariates, treatment, outcome, center)?;
    data.dropped_rows = dropped;
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    Center,
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_unit")]
    pub unit: SplitUnit,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    2.0 / 3.0
}

fn default_unit() -> SplitUnit {
    SplitUnit::Center
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: default_train_fraction(), unit: default_unit(), seed: 0 }
    }
}

/// Row indices of the two sides of a split, each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(data: &TrialDataset, spec: &SplitSpec) -> Result<SplitIndices> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(ItrError::Split(format!("train_fraction must lie in (0,1), got {}", spec.train_fraction)));
    }
    let n = data.n_patients();
    if n < 2 {
        return Err(ItrError::Split("need at least 2 patients".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![false; n];
    match spec.unit {
        SplitUnit::Patient => {
            let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for &i in &order[..n_train] {
                in_train[i] = true;
            }
        }
        SplitUnit::Center => {
            let centers = data
                .center
                .as_ref()
                .ok_or_else(|| ItrError::Split("center labels required for a center-level split".into()))?;
            let mut members: Vec<(String, Vec<usize>)> = Vec::new();
            let mut lookup: HashMap<&str, usize> = HashMap::new();
            for (i, c) in centers.iter().enumerate() {
                let k = *lookup.entry(c.as_str()).or_insert_with(|| {
                    members.push((c.clone(), Vec::new()));
                    members.len() - 1
                });
                members[k].1.push(i);
            }
            if members.len() < 2 {
                return Err(ItrError::Split(format!("need at least 2 centers, found {}", members.len())));
            }
            members.shuffle(&mut rng);
            let quota = spec.train_fraction * n as f64;
            let mut assigned = 0usize;
            let mut n_centers = 0usize;
            for (_, rows) in &members {
                if assigned as f64 >= quota {
                    break;
                }
                assigned += rows.len();
                n_centers += 1;
            }
            // the last center filled the quota with nothing left over: hand it back
            if n_centers == members.len() {
                n_centers -= 1;
            }
            for (_, rows) in &members[..n_centers] {
                for &i in rows {
                    in_train[i] = true;
                }
            }
        }
    }
    let train: Vec<usize> = (0..n).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    if train.is_empty() || test.is_empty() {
        return Err(ItrError::Split("split produced an empty side".into()));
    }
    Ok(SplitIndices { train, test })
}

/// Partitions the dataset into (train, test) according to `spec`.
pub fn split_by_center(data: &TrialDataset, spec: &SplitSpec) -> Result<(TrialDataset, TrialDataset)> {
    let idx = split_indices(data, spec)?;
    Ok((data.subset(&idx.train), data.subset(&idx.test)))
}

#[derive(Debug, Clone, PartialEq)]
enum EncodedColumn {
    Continuous { name: String, mean: f64, scale: f64 },
    /// First entry is the reference level (no dummy column).
    Categorical { name: String, levels: Vec<String> },
}

/// Encoding fitted on training data; reused verbatim on test data.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    columns: Vec<EncodedColumn>,
    standardize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// Column 0 is the intercept.
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
    /// Cells whose categorical level was not seen when the encoder was fitted.
    pub unknown_levels: usize,
    pub encoder: Encoder,
}

impl Encoder {
    pub fn fit(data: &TrialDataset, standardize: bool) -> Encoder {
        let columns = data
            .covariates
            .iter()
            .map(|c| match &c.values {
                CovariateValues::Continuous(v) => {
                    let (mean, scale) = if standardize {
                        let n = v.len() as f64;
                        let mean = v.iter().sum::<f64>() / n;
                        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                        let sd = var.sqrt();
                        (mean, if sd > 1e-12 { sd } else { 1.0 })
                    } else {
                        (0.0, 1.0)
                    };
                    EncodedColumn::Continuous { name: c.name.clone(), mean, scale }
                }
                CovariateValues::Categorical { levels, codes } => {
                    let mut seen = vec![false; levels.len()];
                    for &k in codes {
                        seen[k as usize] = true;
                    }
                    let levels = levels.iter().zip(&seen).filter(|(_, &s)| s).map(|(l, _)| l.clone()).collect();
                    EncodedColumn::Categorical { name: c.name.clone(), levels }
                }
            })
            .collect();
        Encoder { columns, standardize }
    }

    pub fn n_columns(&self) -> usize {
        1 + self
            .columns
            .iter()
            .map(|c| match c {
                EncodedColumn::Continuous { .. } => 1,
                EncodedColumn::Categorical { levels, .. } => levels.len().saturating_sub(1),
            })
            .sum::<usize>()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["(intercept)".to_string()];
        for c in &self.columns {
            match c {
                EncodedColumn::Continuous { name, .. } => names.push(name.clone()),
                EncodedColumn::Categorical { name, levels } => {
                    names.extend(levels.iter().skip(1).map(|l| format!("{name}={l}")));
                }
            }
        }
        names
    }

    pub fn standardizes(&self) -> bool {
        self.standardize
    }

    pub fn transform(&self, data: &TrialDataset) -> Result<DesignMatrix> {
        if data.covariates.len() != self.columns.len() {
            return Err(ItrError::Schema(format!(
                "encoder fitted on {} covariates, dataset has {}",
                self.columns.len(),
                data.covariates.len()
            )));
        }
        let n = data.n_patients();
        let mut values = DMatrix::<f64>::zeros(n, self.n_columns());
        values.column_mut(0).fill(1.0);
        let mut col = 1;
        let mut unknown = 0;
        for (enc, cov) in self.columns.iter().zip(&data.covariates) {
            match (enc, &cov.values) {
                (EncodedColumn::Continuous { mean, scale, .. }, CovariateValues::Continuous(v)) => {
                    for (i, x) in v.iter().enumerate() {
                        values[(i, col)] = (x - mean) / scale;
                    }
                    col += 1;
                }
                (EncodedColumn::Categorical { levels: fitted, .. }, CovariateValues::Categorical { levels, codes }) => {
                    // map this dataset's level codes onto the fitted dummy positions
                    let map: Vec<Option<usize>> =
                        levels.iter().map(|l| fitted.iter().position(|f| f == l)).collect();
                    for (i, &code) in codes.iter().enumerate() {
                        match map[code as usize] {
                            Some(0) => {}
                            Some(k) => values[(i, col + k - 1)] = 1.0,
                            None => unknown += 1,
                        }
                    }
                    col += fitted.len().saturating_sub(1);
                }
                _ => {
                    return Err(ItrError::Schema(format!("covariate `{}` changed type since encoder fit", cov.name)));
                }
            }
        }
        if unknown > 0 {
            log::warn!("{unknown} categorical cells carry levels unseen at fit time; encoded as reference");
        }
        Ok(DesignMatrix { values, column_names: self.column_names(), unknown_levels: unknown, encoder: self.clone() })
    }
}

/// Fits an encoder on `data` and encodes it. Reuse `DesignMatrix::encoder` for test data.
pub fn encode(data: &TrialDataset, standardize: bool) -> Result<DesignMatrix> {
    Encoder::fit(data, standardize).transform(data)
}

/// Encoded covariates together with treatment and outcome: the input every method fits on.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTrial {
    /// Design matrix with the intercept in column 0.
    pub x: DMatrix<f64>,
    pub treatment: Vec<u8>,
    pub outcome: Vec<u8>,
    pub propensity: f64,
}

impl EncodedTrial {
    pub fn new(x: DMatrix<f64>, treatment: Vec<u8>, outcome: Vec<u8>, propensity: f64) -> Result<Self> {
        if x.nrows() != treatment.len() {
            return Err(ItrError::LengthMismatch { left: x.nrows(), right: treatment.len() });
        }
        if outcome.len() != treatment.len() {
            return Err(ItrError::LengthMismatch { left: treatment.len(), right: outcome.len() });
        }
        Ok(EncodedTrial { x, treatment, outcome, propensity })
    }

    pub fn from_design(design: &DesignMatrix, data: &TrialDataset) -> Result<Self> {
        Self::new(design.values.clone(), data.treatment.clone(), data.outcome.clone(), data.propensity)
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1).count()
    }

    pub fn outcome_f64(&self) -> Vec<f64> {
        self.outcome.iter().map(|&y| y as f64).collect()
    }

    /// Row indices of patients with treatment `arm`.
    pub fn arm(&self, arm: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treatment[i] == arm).collect()
    }

    pub fn require_both_arms(&self) -> Result<()> {
        let n1 = self.n_treated();
        if n1 == 0 {
            return Err(ItrError::ArmEmpty("treated"));
        }
        if n1 == self.n() {
            return Err(ItrError::ArmEmpty("control"));
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> EncodedTrial {
        EncodedTrial {
            x: self.x.select_rows(idx),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            outcome: idx.iter().map(|&i| self.outcome[i]).collect(),
            propensity: self.propensity,
        }
    }
}
