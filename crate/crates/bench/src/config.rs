//! Run configuration (one JSON file) and its static validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use itr_core::dataset::{ingest_csv, Schema, SplitSpec, TrialDataset};
use itr_core::evaluation::cfb::CForBenefitConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{BenchError, Result};
use crate::registry::{all_ids, lookup, Family, MethodParams};
use crate::synth::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A trial extract; `path` is relative to the config file.
    Csv { path: PathBuf, schema: Schema },
    /// A simulated trial, drawn in memory.
    Synthetic {
        scenario: Scenario,
        n: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("itr-bench-out")
}

fn default_true() -> bool {
    true
}

fn default_mca_axes() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
    /// Method ids in report order; all 21 when absent.
    #[serde(default)]
    pub methods: Option<Vec<String>>,
    /// Per-method patches merged into the default hyperparameters.
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
    /// Relative to the config file.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Standardize continuous covariates with training means and SDs.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub c_for_benefit: CForBenefitConfig,
    #[serde(default = "default_mca_axes")]
    pub mca_axes: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedMethod {
    pub id: &'static str,
    pub family: Family,
    /// Position in the full method table; fixes the seed stream.
    pub index: usize,
    pub params: MethodParams,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> serde_json::Result<Self> {
        let mut config: RunConfig = serde_json::from_str(text)?;
        config.base_dir = base_dir.into();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base).map_err(|source| BenchError::Parse { path: path.to_path_buf(), source })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn method_ids(&self) -> Vec<String> {
        match &self.methods {
            Some(list) => list.clone(),
            None => all_ids().into_iter().map(String::from).collect(),
        }
    }

    /// Effective hyperparameters of every selected method, in report order.
    pub fn resolve_methods(&self) -> Result<Vec<ResolvedMethod>> {
        let ids = self.method_ids();
        if ids.is_empty() {
            return Err(BenchError::NoMethods);
        }
        let mut out: Vec<ResolvedMethod> = Vec::with_capacity(ids.len());
        for id in &ids {
            let (index, spec) = lookup(id).ok_or_else(|| BenchError::UnknownMethod(id.clone()))?;
            if out.iter().any(|m| m.id == spec.id) {
                return Err(BenchError::DuplicateMethod(id.clone()));
            }
            let params = match self.overrides.get(id) {
                Some(patch) => MethodParams::with_override(id, self.seed, patch)?,
                None => MethodParams::defaults(id, self.seed)?,
            };
            out.push(ResolvedMethod { id: spec.id, family: spec.family, index, params });
        }
        if let Some(orphan) = self.overrides.keys().find(|k| !ids.contains(k)) {
            return Err(BenchError::OrphanOverride(orphan.clone()));
        }
        Ok(out)
    }

    pub fn load_data(&self) -> Result<TrialDataset> {
        match &self.data {
            DataSource::Csv { path, schema } => Ok(ingest_csv(&self.resolve(path), schema)?),
            DataSource::Synthetic { scenario, n, seed } => Ok(scenario.dataset(*n, *seed)?),
        }
    }
}

/// Outcome of [`validate_config`].
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub methods: Vec<ResolvedMethod>,
    pub warnings: Vec<String>,
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "OK")?;
        writeln!(f, "{} methods", self.methods.len())?;
        for m in &self.methods {
            let params = serde_json::to_string(&m.params).map_err(|_| fmt::Error)?;
            writeln!(f, "  {:<13} {params}", m.id)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Parses the config and checks method ids, overrides, the schema and (when
/// the file is present) that every schema column exists. Fits nothing.
pub fn validate_config(path: &Path) -> Result<Diagnostics> {
    let config = RunConfig::load(path)?;
    let methods = config.resolve_methods()?;
    let mut warnings = Vec::new();
    match &config.data {
        DataSource::Csv { path, schema } => {
            schema.validate()?;
            let file = config.resolve(path);
            if file.exists() {
                let mut reader = csv::Reader::from_path(&file)?;
                let header = reader.headers()?.clone();
                for column in schema.referenced_columns() {
                    if !header.iter().any(|h| h == column) {
                        return Err(BenchError::MissingColumn { column: column.to_string(), path: file });
                    }
                }
            } else {
                warnings.push(format!("data file {} not found; column checks skipped", file.display()));
            }
        }
        DataSource::Synthetic { scenario, n, seed } => scenario.spec(*n, *seed).validate()?,
    }
    if !(config.split.train_fraction > 0.0 && config.split.train_fraction < 1.0) {
        return Err(itr_core::ItrError::Split("train_fraction must lie in (0, 1)".into()).into());
    }
    Ok(Diagnostics { methods, warnings })
}
