//! Named synthetic scenarios for smoke runs and the `synth` command.

use itr_core::dataset::{CovariateValues, Schema, TrialDataset};
use itr_core::synthetic::{draw_trial, Effect, ScenarioSpec};
use serde::{Deserialize, Serialize};

pub const TREATMENT_COLUMN: &str = "A";
pub const OUTCOME_COLUMN: &str = "Y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// No effect anywhere.
    Null,
    /// Effect 0.1 for everyone.
    Constant,
    /// Effect 0.4 where the first covariate is positive.
    Threshold,
    /// Effect linear in the first two covariates.
    Linear,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Null, Scenario::Constant, Scenario::Threshold, Scenario::Linear];

    pub fn id(self) -> &'static str {
        match self {
            Scenario::Null => "null",
            Scenario::Constant => "constant",
            Scenario::Threshold => "threshold",
            Scenario::Linear => "linear",
        }
    }

    pub fn parse(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn spec(self, n: usize, seed: u64) -> ScenarioSpec {
        let effect = match self {
            Scenario::Null => Effect::Null,
            Scenario::Constant => Effect::Constant { delta: 0.1 },
            Scenario::Threshold => return ScenarioSpec::threshold(n, seed),
            Scenario::Linear => Effect::Linear { intercept: 0.05, weights: vec![0.08, -0.06, 0.0, 0.0, 0.0, 0.0, 0.0] },
        };
        ScenarioSpec::new(n, effect, seed)
    }

    pub fn dataset(self, n: usize, seed: u64) -> itr_core::Result<TrialDataset> {
        Ok(draw_trial(&self.spec(n, seed))?.data)
    }
}

/// Schema matching [`TrialDataset::write_csv`] output with the default column names.
pub fn schema_for(data: &TrialDataset) -> Schema {
    let (mut continuous, mut categorical) = (Vec::new(), Vec::new());
    for c in &data.covariates {
        match c.values {
            CovariateValues::Continuous(_) => continuous.push(c.name.clone()),
            CovariateValues::Categorical { .. } => categorical.push(c.name.clone()),
        }
    }
    Schema {
        treatment: TREATMENT_COLUMN.into(),
        outcome: OUTCOME_COLUMN.into(),
        center: data.center.as_ref().map(|_| "center".to_string()),
        continuous,
        categorical,
    }
}
