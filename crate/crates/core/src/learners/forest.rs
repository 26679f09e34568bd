//! Random forests for probability estimation and regression.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, BinnedFeatures, GrowInput, TreeConfig, TreeMode, TreeModel};
use crate::error::{ItrError, Result};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `⌈√p⌉` when `None`.
    pub mtry: Option<usize>,
    pub mode: TreeMode,
    /// Fraction of each tree's subsample reserved for leaf estimation; 0 disables
    /// honesty and trees are grown on bootstrap samples instead.
    pub honesty_fraction: f64,
    /// Subsample fraction drawn without replacement when honesty is on.
    pub sample_fraction: f64,
    pub max_depth: Option<usize>,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            min_leaf: 10,
            mtry: None,
            mode: TreeMode::Classify,
            honesty_fraction: 0.0,
            sample_fraction: 0.5,
            max_depth: None,
            max_bins: 256,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn effective_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize).clamp(1, n_features.max(1))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ItrError::Config("n_trees must be ≥ 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ItrError::Config("min_leaf must be ≥ 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > n_features {
                return Err(ItrError::Config(format!("mtry must lie in 1..={n_features}, got {m}")));
            }
        }
        if !(0.0..1.0).contains(&self.honesty_fraction) {
            return Err(ItrError::Config(format!("honesty_fraction must lie in [0,1), got {}", self.honesty_fraction)));
        }
        if self.honesty_fraction > 0.0 && !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(ItrError::Config(format!("sample_fraction must lie in (0,1], got {}", self.sample_fraction)));
        }
        Ok(())
    }
}

/// Rows a tree was grown on and, for honest trees, the rows its leaves were estimated on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSamples {
    pub grow: Vec<usize>,
    pub estimate: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
    /// Per-tree seeds; [`ForestModel::tree_samples`] regenerates the sample indices from them.
    pub tree_seeds: Vec<u64>,
    pub config: ForestConfig,
    pub n_train: usize,
}

fn draw_samples(seed: u64, n: usize, config: &ForestConfig) -> TreeSamples {
    let mut rng = stream_rng(seed, 0x5A);
    if config.honesty_fraction > 0.0 {
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        let m = ((config.sample_fraction * n as f64).round() as usize).clamp(2.min(n), n);
        rows.truncate(m);
        let n_est = ((config.honesty_fraction * m as f64).round() as usize).clamp(1, m.saturating_sub(1).max(1));
        let estimate = rows.split_off(m - n_est);
        TreeSamples { grow: rows, estimate }
    } else {
        TreeSamples { grow: (0..n).map(|_| rng.random_range(0..n)).collect(), estimate: Vec::new() }
    }
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn tree_samples(&self, tree: usize) -> TreeSamples {
        draw_samples(self.tree_seeds[tree], self.n_train, &self.config)
    }

    /// Mean over trees of the leaf means.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let b = self.trees.len() as f64;
        (0..x.nrows())
            .map(|i| self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>() / b)
            .collect()
    }

    /// Out-of-bag predictions for the training rows `x`; rows in every tree's sample
    /// fall back to the full-forest prediction.
    pub fn predict_oob(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.nrows() != self.n_train {
            return Err(ItrError::LengthMismatch { left: x.nrows(), right: self.n_train });
        }
        let mut sum = vec![0.0; self.n_train];
        let mut count = vec![0usize; self.n_train];
        for (b, tree) in self.trees.iter().enumerate() {
            let samples = self.tree_samples(b);
            let mut in_bag = vec![false; self.n_train];
            for &i in samples.grow.iter().chain(&samples.estimate) {
                in_bag[i] = true;
            }
            for i in (0..self.n_train).filter(|&i| !in_bag[i]) {
                sum[i] += tree.predict_row(x, i);
                count[i] += 1;
            }
        }
        let full = self.predict(x);
        Ok((0..self.n_train).map(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { full[i] }).collect())
    }
}

/// Fits a forest on `x` (features only, no intercept column).
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, config: &ForestConfig) -> Result<ForestModel> {
    let n = x.nrows();
    if n != y.len() {
        return Err(ItrError::LengthMismatch { left: n, right: y.len() });
    }
    if n == 0 {
        return Err(ItrError::TooSmall("forest on zero rows".into()));
    }
    config.validate(x.ncols())?;
    if config.mode == TreeMode::Classify && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(ItrError::Config("classification targets must be 0/1".into()));
    }
    let binned = BinnedFeatures::new(x, config.max_bins);
    let input = GrowInput { binned: &binned, y, weights };
    let mtry = config.effective_mtry(x.ncols());
    let tree_seeds: Vec<u64> = (0..config.n_trees as u64).map(|b| derive_seed(config.seed, b)).collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&seed| {
            let samples = draw_samples(seed, n, config);
            let tree_config = TreeConfig {
                mode: config.mode,
                max_depth: config.max_depth,
                min_leaf: config.min_leaf,
                mtry: Some(mtry),
                max_bins: config.max_bins,
                seed,
            };
            grow_tree(&input, samples.grow, samples.estimate, &tree_config)
        })
        .collect();
    Ok(ForestModel { trees, tree_seeds, config: *config, n_train: n })
}

pub fn predict_forest(model: &ForestModel, x: &DMatrix<f64>) -> Vec<f64> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::tree::Node;

    fn noise(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, 1);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());
        let y = (0..n).map(|_| (rng.random::<f64>() < 0.5) as u8 as f64).collect();
        (x, y)
    }

    #[test]
    fn single_leaf_predicts_training_mean() {
        let (x, y) = noise(50, 2, 3);
        // min_leaf = n forbids any split; bootstrap mean is then the only leaf value
        let cfg = ForestConfig { n_trees: 1, min_leaf: 50, ..Default::default() };
        let f = fit_forest(&x, &y, None, &cfg).unwrap();
        let samples = f.tree_samples(0);
        let boot_mean = samples.grow.iter().map(|&i| y[i]).sum::<f64>() / 50.0;
        assert!(f.predict(&x).iter().all(|&p| (p - boot_mean).abs() < 1e-12));
    }

    #[test]
    fn separable_by_one_split() {
        let n = 200;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64 - 0.5);
        let y: Vec<f64> = (0..n).map(|i| (x[(i, 0)] > 0.0) as u8 as f64).collect();
        let cfg = ForestConfig { n_trees: 20, min_leaf: 1, ..Default::default() };
        let f = fit_forest(&x, &y, None, &cfg).unwrap();
        let acc = f.predict(&x).iter().zip(&y).filter(|(p, &v)| (**p > 0.5) == (v == 1.0)).count();
        assert_eq!(acc, n);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = noise(300, 4, 9);
        let cfg = ForestConfig { n_trees: 30, seed: 42, ..Default::default() };
        let a = fit_forest(&x, &y, None, &cfg).unwrap();
        let b = fit_forest(&x, &y, None, &cfg).unwrap();
        assert_eq!(a.predict(&x), b.predict(&x));
    }

    #[test]
    fn mtry_validation() {
        let (x, y) = noise(10, 2, 1);
        let cfg = ForestConfig { mtry: Some(3), ..Default::default() };
        assert!(matches!(fit_forest(&x, &y, None, &cfg), Err(ItrError::Config(_))));
    }

    #[test]
    fn honest_leaves_hold_min_leaf_estimation_rows() {
        let (x, y) = noise(400, 3, 5);
        let cfg = ForestConfig {
            n_trees: 10,
            min_leaf: 8,
            honesty_fraction: 0.5,
            mode: TreeMode::Regress,
            ..Default::default()
        };
        let f = fit_forest(&x, &y, None, &cfg).unwrap();
        for (b, tree) in f.trees.iter().enumerate() {
            let s = f.tree_samples(b);
            assert!(s.grow.iter().all(|i| !s.estimate.contains(i)));
            for node in &tree.nodes {
                if let Node::Leaf(v) = node {
                    assert!(v.count >= 8);
                }
            }
        }
    }

    #[test]
    fn more_trees_reduce_prediction_variance() {
        let (x, y) = noise(300, 3, 11);
        let probe = DMatrix::from_fn(20, 3, |i, j| ((i + j) % 5) as f64 / 5.0);
        let spread = |n_trees: usize| {
            let preds: Vec<Vec<f64>> = (0..8)
                .map(|s| {
                    let cfg = ForestConfig { n_trees, seed: 100 + s, ..Default::default() };
                    fit_forest(&x, &y, None, &cfg).unwrap().predict(&probe)
                })
                .collect();
            (0..probe.nrows())
                .map(|i| {
                    let m = preds.iter().map(|p| p[i]).sum::<f64>() / preds.len() as f64;
                    preds.iter().map(|p| (p[i] - m).powi(2)).sum::<f64>() / (preds.len() - 1) as f64
                })
                .sum::<f64>()
        };
        assert!(spread(500) < spread(5));
    }
}
