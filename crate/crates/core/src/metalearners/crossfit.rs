//! Repeated K-fold cross-fitting of a meta-learner.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_meta_learner, partition, BaseLearner, MetaLearnerKind, MetaLearnerModel, MetaOptions};
use crate::dataset::EncodedTrial;
use crate::error::{ItrError, Result};
use crate::rng::derive_seed;
use crate::rule::IteModel;

const MAX_REDRAWS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

impl Aggregate {
    pub fn reduce(self, values: &mut [f64]) -> f64 {
        match self {
            Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregate::Median => {
                values.sort_by(f64::total_cmp);
                let m = values.len() / 2;
                if values.len() % 2 == 1 {
                    values[m]
                } else {
                    0.5 * (values[m - 1] + values[m])
                }
            }
        }
    }
}

/// How effects are predicted for patients outside the training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestPrediction {
    /// Aggregate over every split × fold model.
    #[default]
    AverageModels,
    /// Refit the learner once on all training data.
    Refit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossfitConfig {
    pub n_folds: usize,
    pub n_splits: usize,
    pub seed: u64,
    pub aggregate: Aggregate,
    pub test_prediction: TestPrediction,
}

impl Default for CrossfitConfig {
    fn default() -> Self {
        CrossfitConfig {
            n_folds: 5,
            n_splits: 30,
            seed: 0,
            aggregate: Aggregate::Mean,
            test_prediction: TestPrediction::AverageModels,
        }
    }
}

impl CrossfitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(ItrError::Config(format!("n_folds must be ≥ 2, got {}", self.n_folds)));
        }
        if self.n_splits == 0 {
            return Err(ItrError::Config("n_splits must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn has_both_arms(treatment: &[u8], rows: impl Iterator<Item = usize>) -> bool {
    let mut seen = [false; 2];
    for i in rows {
        seen[treatment[i] as usize] = true;
    }
    seen[0] && seen[1]
}

/// The fold partition of split `split`. Partitions in which some fold, or some
/// fold's complement, lacks an arm are redrawn up to 100 times.
pub fn crossfit_folds(treatment: &[u8], n_folds: usize, seed: u64, split: usize) -> Result<Vec<Vec<usize>>> {
    let n = treatment.len();
    if n < n_folds {
        return Err(ItrError::CrossFit(format!("{n} patients cannot fill {n_folds} folds")));
    }
    for redraw in 0..MAX_REDRAWS {
        let folds = partition(n, n_folds, derive_seed(seed, split as u64), redraw);
        let ok = folds.iter().all(|fold| {
            let mut inside = vec![false; n];
            for &i in fold {
                inside[i] = true;
            }
            has_both_arms(treatment, fold.iter().copied()) && has_both_arms(treatment, (0..n).filter(|&i| !inside[i]))
        });
        if ok {
            return Ok(folds);
        }
    }
    Err(ItrError::CrossFit(format!("no fold partition with both arms everywhere after {MAX_REDRAWS} draws")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossfitModel {
    pub kind: MetaLearnerKind,
    /// Split-major, fold-minor.
    pub models: Vec<MetaLearnerModel>,
    /// Out-of-fold estimate for each training patient, aggregated over splits.
    pub oof_tau: Vec<f64>,
    pub refit: Option<MetaLearnerModel>,
    pub aggregate: Aggregate,
}

impl IteModel for CrossfitModel {
    fn predict_ite(&self, x: &DMatrix<f64>) -> Vec<f64> {
        if let Some(refit) = &self.refit {
            return refit.predict_ite(x);
        }
        let preds: Vec<Vec<f64>> = self.models.iter().map(|m| m.predict_ite(x)).collect();
        aggregate_columns(&preds, x.nrows(), self.aggregate)
    }
}

fn aggregate_columns(preds: &[Vec<f64>], n: usize, how: Aggregate) -> Vec<f64> {
    let mut buf = vec![0.0; preds.len()];
    (0..n)
        .map(|i| {
            for (b, p) in buf.iter_mut().zip(preds) {
                *b = p[i];
            }
            how.reduce(&mut buf)
        })
        .collect()
}

/// Effects from a cross-fit without retaining the fold models.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossfitOutput {
    pub oof_tau: Vec<f64>,
    pub test_tau: Vec<f64>,
    pub converged: bool,
}

struct FoldFit {
    split: usize,
    rows: Vec<usize>,
    oof: Vec<f64>,
    test: Vec<f64>,
    converged: bool,
    model: Option<MetaLearnerModel>,
}

fn run(
    kind: MetaLearnerKind,
    data: &EncodedTrial,
    test_x: Option<&DMatrix<f64>>,
    base: &BaseLearner,
    options: &MetaOptions,
    config: &CrossfitConfig,
    keep_models: bool,
) -> Result<(Vec<f64>, Vec<FoldFit>)> {
    config.validate()?;
    let n = data.n();
    let mut jobs = Vec::with_capacity(config.n_splits * config.n_folds);
    for split in 0..config.n_splits {
        for (k, fold) in crossfit_folds(&data.treatment, config.n_folds, config.seed, split)?.into_iter().enumerate() {
            jobs.push((split, k, fold));
        }
    }
    let fits: Vec<FoldFit> = jobs
        .into_par_iter()
        .map(|(split, k, fold)| -> Result<FoldFit> {
            let mut inside = vec![false; n];
            for &i in &fold {
                inside[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !inside[i]).collect();
            let opts = MetaOptions { seed: derive_seed(config.seed, (split * config.n_folds + k) as u64 + 1), ..*options };
            let model = fit_meta_learner(kind, &data.select(&train), base, &opts)?;
            let oof = model.predict_ite(&data.x.select_rows(&fold));
            let test = test_x.map(|x| model.predict_ite(x)).unwrap_or_default();
            Ok(FoldFit { split, rows: fold, oof, test, converged: model.converged(), model: keep_models.then_some(model) })
        })
        .collect::<Result<_>>()?;
    let mut per_split = vec![vec![0.0; n]; config.n_splits];
    for f in &fits {
        for (&i, &t) in f.rows.iter().zip(&f.oof) {
            per_split[f.split][i] = t;
        }
    }
    let oof = aggregate_columns(&per_split, n, config.aggregate);
    Ok((oof, fits))
}

/// Cross-fits `kind` and keeps every fold model for later prediction.
pub fn crossfit(
    kind: MetaLearnerKind,
    data: &EncodedTrial,
    base: &BaseLearner,
    options: &MetaOptions,
    config: &CrossfitConfig,
) -> Result<CrossfitModel> {
    let (oof_tau, fits) = run(kind, data, None, base, options, config, true)?;
    let refit = match config.test_prediction {
        TestPrediction::Refit => Some(fit_meta_learner(kind, data, base, &MetaOptions { seed: config.seed, ..*options })?),
        TestPrediction::AverageModels => None,
    };
    Ok(CrossfitModel {
        kind,
        models: fits.into_iter().filter_map(|f| f.model).collect(),
        oof_tau,
        refit,
        aggregate: config.aggregate,
    })
}

/// Cross-fits `kind` and predicts `test_x` on the fly, dropping each fold model
/// once used. Matches [`crossfit`] followed by prediction.
pub fn crossfit_predict(
    kind: MetaLearnerKind,
    data: &EncodedTrial,
    test_x: &DMatrix<f64>,
    base: &BaseLearner,
    options: &MetaOptions,
    config: &CrossfitConfig,
) -> Result<CrossfitOutput> {
    let (oof_tau, fits) = run(kind, data, Some(test_x), base, options, config, false)?;
    let mut converged = fits.iter().all(|f| f.converged);
    let test_tau = match config.test_prediction {
        TestPrediction::AverageModels => {
            let preds: Vec<Vec<f64>> = fits.into_iter().map(|f| f.test).collect();
            aggregate_columns(&preds, test_x.nrows(), config.aggregate)
        }
        TestPrediction::Refit => {
            let model = fit_meta_learner(kind, data, base, &MetaOptions { seed: config.seed, ..*options })?;
            converged &= model.converged();
            model.predict_ite(test_x)
        }
    };
    Ok(CrossfitOutput { oof_tau, test_tau, converged })
}
