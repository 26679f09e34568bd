//! The base-learner families the meta-learners are built from.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ItrError, Result};
use crate::learners::{
    fit_forest, fit_logistic, fit_ridge, ForestConfig, ForestModel, LogisticConfig, LogisticModel, RidgeModel, TreeMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BaseLearner {
    /// Logistic regression for probabilities, ridge for effect regressions.
    /// `ridge` is the per-observation penalty; a fit on `n` rows uses `n · ridge`.
    Parametric { logistic: LogisticConfig, ridge: f64 },
    /// Classification forests for probabilities, regression forests for effects.
    Forest { classify: ForestConfig, regress: ForestConfig },
    /// Intercept only: the (weighted) sample mean.
    Mean,
}

impl BaseLearner {
    pub fn parametric() -> Self {
        BaseLearner::Parametric { logistic: LogisticConfig::default(), ridge: 1e-4 }
    }

    pub fn forest() -> Self {
        Self::forest_with_trees(500)
    }

    /// Forest family with `n_trees` in both modes; regression leaves hold at least 20 rows.
    pub fn forest_with_trees(n_trees: usize) -> Self {
        BaseLearner::Forest {
            classify: ForestConfig { n_trees, ..ForestConfig::default() },
            regress: ForestConfig { n_trees, min_leaf: 20, mode: TreeMode::Regress, ..ForestConfig::default() },
        }
    }

    pub fn is_forest(&self) -> bool {
        matches!(self, BaseLearner::Forest { .. })
    }

    /// Fits `P(y = 1 | x)` for binary `y`.
    pub fn fit_probability(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<FittedBase> {
        if y.is_empty() {
            return Err(ItrError::TooSmall("base learner on zero rows".into()));
        }
        match self {
            BaseLearner::Parametric { logistic, .. } => Ok(FittedBase::Logistic(fit_logistic(x, y, None, logistic)?)),
            BaseLearner::Forest { classify, .. } => {
                let cfg = ForestConfig { mode: TreeMode::Classify, seed, ..*classify };
                Ok(FittedBase::Forest(fit_forest(&features(x), y, None, &cfg)?))
            }
            BaseLearner::Mean => Ok(FittedBase::Constant(y.iter().sum::<f64>() / y.len() as f64)),
        }
    }

    /// Fits `E[y | x]` for real-valued `y` with optional case weights.
    pub fn fit_regression(&self, x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, seed: u64) -> Result<FittedBase> {
        if y.is_empty() {
            return Err(ItrError::TooSmall("base learner on zero rows".into()));
        }
        match self {
            BaseLearner::Parametric { ridge, .. } => {
                Ok(FittedBase::Ridge(fit_ridge(x, y, weights, ridge * y.len() as f64)?))
            }
            BaseLearner::Forest { regress, .. } => {
                let cfg = ForestConfig { mode: TreeMode::Regress, seed, ..*regress };
                Ok(FittedBase::Forest(fit_forest(&features(x), y, weights, &cfg)?))
            }
            BaseLearner::Mean => {
                let (num, den) = match weights {
                    Some(w) => (y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>(), w.iter().sum::<f64>()),
                    None => (y.iter().sum(), y.len() as f64),
                };
                if den <= 0.0 {
                    return Err(ItrError::TooSmall("all regression weights are zero".into()));
                }
                Ok(FittedBase::Constant(num / den))
            }
        }
    }
}

/// Drops the intercept column.
pub(crate) fn features(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.columns(1, x.ncols() - 1).into_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedBase {
    Logistic(LogisticModel),
    Ridge(RidgeModel),
    Forest(ForestModel),
    Constant(f64),
}

impl FittedBase {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            FittedBase::Logistic(m) => m.predict_proba(x),
            FittedBase::Ridge(m) => m.predict(x),
            FittedBase::Forest(m) => m.predict(&features(x)),
            FittedBase::Constant(c) => vec![*c; x.nrows()],
        }
    }

    /// False only for a logistic fit that hit its iteration cap.
    pub fn converged(&self) -> bool {
        match self {
            FittedBase::Logistic(m) => m.converged,
            _ => true,
        }
    }
}
