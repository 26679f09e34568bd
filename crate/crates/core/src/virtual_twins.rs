//! Virtual twins: a forest on `[x, a, a·x]` predicts each patient's outcome under both
//! arms, and a shallow classification tree on `1{τ̂ > c}` turns those twin contrasts
//! into a region of patients to treat.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedTrial;
use crate::error::Result;
use crate::evaluation::{check_lengths, cfb::quantile, Interval, Metric, Undefined};
use crate::learners::{fit_forest, fit_tree, ForestConfig, ForestModel, TreeConfig, TreeMode, TreeModel};
use crate::metalearners::base::features;
use crate::metalearners::s_design;
use crate::rng::{derive_seed, stream_rng};
use crate::rule::TreatmentRule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VirtualTwinsConfig {
    pub forest: ForestConfig,
    /// Effect threshold `c`; patients with `τ̂ > c` get label 1.
    pub threshold: f64,
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    /// Use out-of-bag twin predictions instead of in-bag ones.
    pub out_of_bag: bool,
    pub seed: u64,
}

impl Default for VirtualTwinsConfig {
    fn default() -> Self {
        VirtualTwinsConfig {
            forest: ForestConfig { mode: TreeMode::Classify, ..ForestConfig::default() },
            threshold: 0.0,
            tree_max_depth: 4,
            tree_min_leaf: 20,
            out_of_bag: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTwinsModel {
    pub forest: ForestModel,
    pub tree: TreeModel,
    pub threshold: f64,
    /// Twin contrasts `P̂(Y=1 | x, a=1) − P̂(Y=1 | x, a=0)` on the training rows.
    pub train_tau: Vec<f64>,
    /// Set when every step-2 label was equal, so the region is everyone or no one.
    pub constant_labels: bool,
}

/// Twin contrasts for the rows of `x` from a forest fitted on `s_design` features.
fn twin_contrasts(forest: &ForestModel, x: &DMatrix<f64>, out_of_bag: bool) -> Result<Vec<f64>> {
    let n = x.nrows();
    let treated = features(&s_design(x, &vec![1.0; n]));
    let control = features(&s_design(x, &vec![0.0; n]));
    let (p1, p0) = if out_of_bag {
        (forest.predict_oob(&treated)?, forest.predict_oob(&control)?)
    } else {
        (forest.predict(&treated), forest.predict(&control))
    };
    Ok(p1.iter().zip(&p0).map(|(a, b)| a - b).collect())
}

pub fn fit_virtual_twins(data: &EncodedTrial, config: &VirtualTwinsConfig) -> Result<VirtualTwinsModel> {
    data.require_both_arms()?;
    let a: Vec<f64> = data.treatment.iter().map(|&v| v as f64).collect();
    let forest_cfg = ForestConfig { mode: TreeMode::Classify, seed: derive_seed(config.seed, 1), ..config.forest };
    let forest = fit_forest(&features(&s_design(&data.x, &a)), &data.outcome_f64(), None, &forest_cfg)?;
    let train_tau = twin_contrasts(&forest, &data.x, config.out_of_bag)?;

    let labels: Vec<f64> = train_tau.iter().map(|&t| (t > config.threshold) as u8 as f64).collect();
    let constant_labels = labels.iter().all(|&l| l == labels[0]);
    if constant_labels {
        log::warn!("virtual twins: all step-2 labels equal {}; rule is constant", labels[0]);
    }
    let tree_cfg = TreeConfig {
        mode: TreeMode::Classify,
        max_depth: Some(config.tree_max_depth),
        min_leaf: config.tree_min_leaf,
        mtry: None,
        max_bins: config.forest.max_bins,
        seed: derive_seed(config.seed, 2),
    };
    let tree = fit_tree(&features(&data.x), &labels, None, &tree_cfg)?;
    Ok(VirtualTwinsModel { forest, tree, threshold: config.threshold, train_tau, constant_labels })
}

impl VirtualTwinsModel {
    /// Twin contrasts for new rows.
    pub fn twin_tau(&self, x: &DMatrix<f64>) -> Vec<f64> {
        twin_contrasts(&self.forest, x, false).expect("in-bag prediction cannot fail")
    }

    /// Step-2 labels `1{τ̂ > c}` of the training rows.
    pub fn train_labels(&self) -> Vec<u8> {
        self.train_tau.iter().map(|&t| (t > self.threshold) as u8).collect()
    }
}

impl TreatmentRule for VirtualTwinsModel {
    /// Tree probability of `τ* = 1`, shifted so that the decision is `score > 0`.
    fn score(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.tree.predict(&features(x)).into_iter().map(|p| p - 0.5).collect()
    }

    fn decide(&self, x: &DMatrix<f64>) -> Vec<u8> {
        self.tree.classify(&features(x)).into_iter().map(|c| c as u8).collect()
    }
}

/// Plug-in `Q̂(S) = [P̂(Y=1|A=1,S) − P̂(Y=1|A=0,S)] − [P̂(Y=1|A=1) − P̂(Y=1|A=0)]`,
/// with `S` the patients whose decision is 1.
pub fn q_of_s(decisions: &[u8], treatment: &[u8], outcome: &[u8]) -> Result<Metric<f64>> {
    check_lengths(decisions, treatment, outcome)?;
    let mut n = [[0usize; 2]; 2];
    let mut events = [[0usize; 2]; 2];
    for ((&r, &a), &y) in decisions.iter().zip(treatment).zip(outcome) {
        // index 1: inside S, index 0: everyone
        n[0][a as usize] += 1;
        events[0][a as usize] += y as usize;
        if r == 1 {
            n[1][a as usize] += 1;
            events[1][a as usize] += y as usize;
        }
    }
    let name = |g: usize, a: usize| {
        format!("{} patients {}", if a == 1 { "treated" } else { "control" }, if g == 1 { "inside S" } else { "overall" })
    };
    let mut p = [[0.0; 2]; 2];
    for g in [1, 0] {
        for a in [1, 0] {
            if n[g][a] == 0 {
                return Ok(Err(Undefined(format!("no {}", name(g, a)))));
            }
            p[g][a] = events[g][a] as f64 / n[g][a] as f64;
        }
    }
    Ok(Ok((p[1][1] - p[1][0]) - (p[0][1] - p[0][0])))
}

/// `Q̂(S)` with a naive percentile bootstrap interval; resamples where `Q̂` is
/// undefined are skipped.
pub fn q_of_s_bootstrap(
    decisions: &[u8],
    treatment: &[u8],
    outcome: &[u8],
    n_bootstrap: usize,
    seed: u64,
) -> Result<Metric<Interval>> {
    let estimate = match q_of_s(decisions, treatment, outcome)? {
        Ok(q) => q,
        Err(u) => return Ok(Err(u)),
    };
    let n = decisions.len();
    let mut rng = stream_rng(seed, 0x0B);
    let mut boot = Vec::with_capacity(n_bootstrap);
    let (mut d, mut a, mut y) = (vec![0u8; n], vec![0u8; n], vec![0u8; n]);
    for _ in 0..n_bootstrap {
        for k in 0..n {
            let i = rng.random_range(0..n);
            d[k] = decisions[i];
            a[k] = treatment[i];
            y[k] = outcome[i];
        }
        if let Ok(q) = q_of_s(&d, &a, &y)? {
            boot.push(q);
        }
    }
    let (lower, upper) = if boot.is_empty() {
        (estimate, estimate)
    } else {
        boot.sort_by(f64::total_cmp);
        (quantile(&boot, 0.025), quantile(&boot, 0.975))
    };
    Ok(Ok(Interval { estimate, lower, upper }))
}
