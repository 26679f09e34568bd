//! Rules estimated without individual effects.
//!
//! A-learning and the modified covariate method fit a linear benefit score `f(x)` by
//! a logistic loss on modified covariates. Outcome weighted learning and contrast
//! weighted learning fit a weighted hinge classifier whose sign is the rule. Every
//! fit first puts the rows in a canonical order, so decisions do not depend on the
//! order of the training data.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedTrial;
use crate::error::{ItrError, Result};
use crate::evaluation::value;
use crate::learners::logistic::minimize;
use crate::learners::{fit_weighted_hinge, HingeConfig, LogisticObjective, WeightedHingeModel};
use crate::metalearners::partition;
use crate::rng::{derive_seed, stream_rng};
use crate::rule::TreatmentRule;

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];

/// Row order by covariates, then treatment, then outcome.
pub fn canonical_order(data: &EncodedTrial) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&i, &j| {
        for c in 0..data.x.ncols() {
            match data.x[(i, c)].total_cmp(&data.x[(j, c)]) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        (data.treatment[i], data.outcome[i]).cmp(&(data.treatment[j], data.outcome[j]))
    });
    order
}

fn canonical(data: &EncodedTrial) -> EncodedTrial {
    data.select(&canonical_order(data))
}

/// Probability of the arm each patient actually received.
fn received_propensity(a: u8, pi: f64) -> f64 {
    if a == 1 {
        pi
    } else {
        1.0 - pi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenefitMethod {
    #[serde(rename = "AL")]
    ALearning,
    #[serde(rename = "MCM")]
    ModifiedCovariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenefitConfig {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BenefitConfig {
    fn default() -> Self {
        BenefitConfig { l2: 1e-4, tol: 1e-6, max_iter: 5000 }
    }
}

/// Linear benefit score `f(x) = xᵀβ`; treat when `f(x) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenefitScoreModel {
    pub method: BenefitMethod,
    pub coefficients: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl BenefitScoreModel {
    pub fn benefit(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (x * &self.coefficients).iter().copied().collect()
    }
}

impl TreatmentRule for BenefitScoreModel {
    fn score(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.benefit(x)
    }

    fn benefit_score(&self, x: &DMatrix<f64>) -> Option<Vec<f64>> {
        Some(self.benefit(x))
    }
}

/// Modified covariates and case weights for the logistic loss `M(y, v) = −y·v + log(1 + eᵛ)`.
/// A-learning: rows scaled by `A − π`, unit weights. MCM: rows scaled by `2A − 1`,
/// weights `1 / P(received arm)`.
pub fn modified_problem(data: &EncodedTrial, method: BenefitMethod) -> (DMatrix<f64>, Option<Vec<f64>>) {
    let pi = data.propensity;
    let mut z = data.x.clone();
    let weights = match method {
        BenefitMethod::ALearning => {
            for (i, &a) in data.treatment.iter().enumerate() {
                z.row_mut(i).scale_mut(a as f64 - pi);
            }
            None
        }
        BenefitMethod::ModifiedCovariate => {
            for (i, &a) in data.treatment.iter().enumerate() {
                z.row_mut(i).scale_mut(2.0 * a as f64 - 1.0);
            }
            Some(data.treatment.iter().map(|&a| 1.0 / received_propensity(a, pi)).collect())
        }
    };
    (z, weights)
}

pub fn fit_benefit_score(data: &EncodedTrial, method: BenefitMethod, config: &BenefitConfig) -> Result<BenefitScoreModel> {
    data.require_both_arms()?;
    let data = canonical(data);
    let (z, weights) = modified_problem(&data, method);
    let y = data.outcome_f64();
    let objective = LogisticObjective { x: &z, y: &y, weights: weights.as_deref(), l2: config.l2 };
    let fit = minimize(&objective, config.tol, config.max_iter);
    if !fit.converged {
        log::warn!("{method:?} did not converge in {} iterations", fit.iterations);
    }
    Ok(BenefitScoreModel { method, coefficients: fit.coefficients, converged: fit.converged, iterations: fit.iterations })
}

pub fn fit_a_learning(data: &EncodedTrial, config: &BenefitConfig) -> Result<BenefitScoreModel> {
    fit_benefit_score(data, BenefitMethod::ALearning, config)
}

pub fn fit_mcm(data: &EncodedTrial, config: &BenefitConfig) -> Result<BenefitScoreModel> {
    fit_benefit_score(data, BenefitMethod::ModifiedCovariate, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HingeMethod {
    #[serde(rename = "OWL")]
    OutcomeWeighted,
    #[serde(rename = "CWL")]
    ContrastWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HingeRuleConfig {
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub hinge: HingeConfig,
    /// Maximum number of informative pairs for contrast weighting; more are subsampled.
    pub pair_budget: usize,
    pub seed: u64,
}

impl Default for HingeRuleConfig {
    fn default() -> Self {
        HingeRuleConfig {
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            cv_folds: 5,
            hinge: HingeConfig::default(),
            pair_budget: 1_000_000,
            seed: 0,
        }
    }
}

impl HingeRuleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|&l| !(l > 0.0)) {
            return Err(ItrError::Config("lambda grid must be non-empty and positive".into()));
        }
        if self.cv_folds < 2 {
            return Err(ItrError::Config(format!("cv_folds must be ≥ 2, got {}", self.cv_folds)));
        }
        if self.pair_budget == 0 {
            return Err(ItrError::Config("pair_budget must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Per-patient classification targets for the hinge fit.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeTargets {
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    /// Informative pairs used (contrast weighting only).
    pub n_pairs: usize,
    pub subsampled: bool,
}

/// Labels `2A − 1` and weights `Y / P(received arm)`, which is `2Y` at `π = 1/2`.
pub fn owl_targets(treatment: &[u8], outcome: &[u8], pi: f64) -> HingeTargets {
    HingeTargets {
        labels: treatment.iter().map(|&a| 2.0 * a as f64 - 1.0).collect(),
        weights: treatment.iter().zip(outcome).map(|(&a, &y)| y as f64 / received_propensity(a, pi)).collect(),
        n_pairs: 0,
        subsampled: false,
    }
}

/// Win-indicator pair weight `|h| / (π_i π_j)`.
pub fn pair_weight(a_i: u8, a_j: u8, pi: f64) -> f64 {
    1.0 / (received_propensity(a_i, pi) * received_propensity(a_j, pi))
}

/// Reduces the pair loss to per-patient targets. For a pair with `s = sgn(Y_i − Y_j) ≠ 0`,
/// patient `i` is pushed toward label `s(2A_i − 1)` and patient `j` toward `−s(2A_j − 1)`,
/// each with the pair weight. Signed contributions are summed per patient; the label is
/// the sign of the sum and the weight its magnitude. Pairs are enumerated when there
/// are at most `pair_budget` informative ones, otherwise `pair_budget` are drawn at random.
pub fn cwl_targets(treatment: &[u8], outcome: &[u8], pi: f64, pair_budget: usize, seed: u64) -> HingeTargets {
    let n = treatment.len();
    let winners: Vec<usize> = (0..n).filter(|&i| outcome[i] == 1).collect();
    let losers: Vec<usize> = (0..n).filter(|&i| outcome[i] == 0).collect();
    let total = winners.len() * losers.len();
    let mut signed = vec![0.0; n];
    let mut add = |i: usize, j: usize| {
        // i won against j: s = +1
        let w = pair_weight(treatment[i], treatment[j], pi);
        signed[i] += w * (2.0 * treatment[i] as f64 - 1.0);
        signed[j] -= w * (2.0 * treatment[j] as f64 - 1.0);
    };
    let subsampled = total > pair_budget;
    if subsampled {
        let mut rng = stream_rng(seed, 0xC1);
        for _ in 0..pair_budget {
            let i = winners[rng.random_range(0..winners.len())];
            let j = losers[rng.random_range(0..losers.len())];
            add(i, j);
        }
    } else {
        for i in 0..n {
            for j in i + 1..n {
                match outcome[i].cmp(&outcome[j]) {
                    Ordering::Greater => add(i, j),
                    Ordering::Less => add(j, i),
                    Ordering::Equal => {}
                }
            }
        }
    }
    HingeTargets {
        labels: signed.iter().map(|&s| if s < 0.0 { -1.0 } else { 1.0 }).collect(),
        weights: signed.iter().map(|s| s.abs()).collect(),
        n_pairs: total.min(pair_budget),
        subsampled,
    }
}

/// Cross-validated value of one penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    /// Mean held-out value over the folds where it is defined.
    pub cv_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HingeRuleModel {
    pub method: HingeMethod,
    pub hinge: WeightedHingeModel,
    pub lambda: f64,
    pub cv_scores: Vec<LambdaScore>,
    pub n_pairs: usize,
    pub pair_seed: u64,
    /// Set when no patient carries weight; the rule then treats no one.
    pub degenerate: bool,
}

impl TreatmentRule for HingeRuleModel {
    fn score(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.hinge.decision_function(x)
    }
}

fn targets(method: HingeMethod, data: &EncodedTrial, cfg: &HingeRuleConfig, seed: u64) -> HingeTargets {
    match method {
        HingeMethod::OutcomeWeighted => owl_targets(&data.treatment, &data.outcome, data.propensity),
        HingeMethod::ContrastWeighted => {
            cwl_targets(&data.treatment, &data.outcome, data.propensity, cfg.pair_budget, seed)
        }
    }
}

/// Picks λ by the cross-validated value of the rule; ties go to the larger penalty.
fn select_lambda(method: HingeMethod, data: &EncodedTrial, cfg: &HingeRuleConfig) -> Result<Vec<LambdaScore>> {
    let n = data.n();
    let folds = partition(n, cfg.cv_folds.min(n), cfg.seed, 0x0C);
    let jobs: Vec<(usize, usize)> =
        (0..cfg.lambda_grid.len()).flat_map(|l| (0..folds.len()).map(move |k| (l, k))).collect();
    let results: Vec<(usize, Option<f64>)> = jobs
        .par_iter()
        .map(|&(l, k)| {
            let mut held_out = vec![false; n];
            for &i in &folds[k] {
                held_out[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !held_out[i]).collect();
            let train_data = data.select(&train);
            let test_data = data.select(&folds[k]);
            let t = targets(method, &train_data, cfg, derive_seed(cfg.seed, k as u64 + 1));
            let model = fit_weighted_hinge(&train_data.x, &t.labels, &t.weights, cfg.lambda_grid[l], &cfg.hinge)?;
            let decisions: Vec<u8> = model.decision_function(&test_data.x).iter().map(|&s| (s > 0.0) as u8).collect();
            let v = value(&decisions, &test_data.treatment, &test_data.outcome)?;
            Ok((l, v.ok().map(|e| e.estimate)))
        })
        .collect::<Result<_>>()?;
    Ok(cfg
        .lambda_grid
        .iter()
        .enumerate()
        .map(|(l, &lambda)| {
            let defined: Vec<f64> = results.iter().filter(|r| r.0 == l).filter_map(|r| r.1).collect();
            let cv_value = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            LambdaScore { lambda, cv_value }
        })
        .collect())
}

fn best_lambda(scores: &[LambdaScore]) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for s in scores {
        if let Some(v) = s.cv_value {
            let better = match best {
                None => true,
                Some((bv, bl)) => v > bv || (v == bv && s.lambda > bl),
            };
            if better {
                best = Some((v, s.lambda));
            }
        }
    }
    best.map_or_else(|| scores.iter().map(|s| s.lambda).fold(f64::MIN, f64::max), |b| b.1)
}

pub fn fit_hinge_rule(data: &EncodedTrial, method: HingeMethod, config: &HingeRuleConfig) -> Result<HingeRuleModel> {
    config.validate()?;
    data.require_both_arms()?;
    let data = canonical(data);
    let pair_seed = derive_seed(config.seed, 0);
    let t = targets(method, &data, config, pair_seed);
    let degenerate = t.weights.iter().all(|&w| w == 0.0);
    let (lambda, cv_scores) = if degenerate {
        log::warn!("{method:?}: every weight is zero; the rule treats no one");
        let lambda = config.lambda_grid.iter().copied().fold(f64::MIN, f64::max);
        (lambda, Vec::new())
    } else {
        let scores = select_lambda(method, &data, config)?;
        (best_lambda(&scores), scores)
    };
    let hinge = fit_weighted_hinge(&data.x, &t.labels, &t.weights, lambda, &config.hinge)?;
    Ok(HingeRuleModel { method, hinge, lambda, cv_scores, n_pairs: t.n_pairs, pair_seed, degenerate })
}

pub fn fit_owl(data: &EncodedTrial, config: &HingeRuleConfig) -> Result<HingeRuleModel> {
    fit_hinge_rule(data, HingeMethod::OutcomeWeighted, config)
}

pub fn fit_cwl(data: &EncodedTrial, config: &HingeRuleConfig) -> Result<HingeRuleModel> {
    fit_hinge_rule(data, HingeMethod::ContrastWeighted, config)
}
