//! Honest causal forest.
//!
//! Each tree draws a subsample without replacement and splits it into a build half,
//! which alone decides the splits, and an estimation half, whose rows populate the
//! leaves. A split maximizes `n_L · n_R · (Δ_L − Δ_R)²`, with `Δ` the difference in
//! arm means of the build rows in a child. Every child keeps at least `min_leaf`
//! rows of each arm in both halves.
//!
//! Prediction turns the forest into weights `α_i(x) = (1/B) Σ_b 1{i ∈ L_b(x)} / |L_b(x)|`
//! over estimation rows and returns the minimizer of the α-weighted R-loss
//! `Σ α_i [(Y_i − Ȳ_α) − (A_i − π) τ]²`, clamped to [−1, 1].

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedTrial;
use crate::error::{ItrError, Result};
use crate::learners::tree::{candidate_features, descend, BinnedFeatures, Node};
use crate::metalearners::base::features;
use crate::rng::{derive_seed, stream_rng};
use crate::rule::{clamp_unit, IteModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CausalForestConfig {
    pub n_trees: usize,
    /// Minimum rows of each arm per leaf, in both the build and estimation halves.
    pub min_leaf: usize,
    /// Features tried per split; `min(p, ⌈√p⌉ + 20)` when `None`.
    pub mtry: Option<usize>,
    pub sample_fraction: f64,
    /// Share of each subsample reserved for leaf estimation.
    pub honesty_fraction: f64,
    pub max_depth: Option<usize>,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for CausalForestConfig {
    fn default() -> Self {
        CausalForestConfig {
            n_trees: 500,
            min_leaf: 10,
            mtry: None,
            sample_fraction: 0.5,
            honesty_fraction: 0.5,
            max_depth: None,
            max_bins: 256,
            seed: 0,
        }
    }
}

impl CausalForestConfig {
    pub fn effective_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| n_features.min((n_features as f64).sqrt().ceil() as usize + 20))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ItrError::Config("causal forest needs at least one tree".into()));
        }
        if self.min_leaf < 5 {
            return Err(ItrError::Config(format!("min_leaf must be ≥ 5 per arm, got {}", self.min_leaf)));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(ItrError::Config(format!("sample_fraction must lie in (0, 1], got {}", self.sample_fraction)));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return Err(ItrError::Config(format!("honesty_fraction must lie in (0, 1), got {}", self.honesty_fraction)));
        }
        let m = self.effective_mtry(n_features);
        if m == 0 || m > n_features {
            return Err(ItrError::Config(format!("mtry must lie in 1..={n_features}, got {m}")));
        }
        if self.max_bins < 2 || self.max_bins > u16::MAX as usize {
            return Err(ItrError::Config(format!("max_bins must lie in 2..=65535, got {}", self.max_bins)));
        }
        Ok(())
    }
}

/// Estimation rows in a leaf and the sums the closed-form estimate needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CausalLeaf {
    pub rows: Vec<u32>,
    sum_y: f64,
    sum_a: f64,
    sum_ay: f64,
    sum_aa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalTree {
    pub(crate) nodes: Vec<Node<CausalLeaf>>,
    pub seed: u64,
}

impl CausalTree {
    fn leaf(&self, value: impl Fn(usize) -> f64) -> &CausalLeaf {
        match &self.nodes[descend(&self.nodes, value)] {
            Node::Leaf(l) => l,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match &self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            Node::Leaf(_) => None,
        }
    }

    /// Every split as `(feature, threshold)`, features indexed without the intercept.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
                Node::Leaf(_) => None,
            })
            .collect()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &CausalLeaf> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        })
    }
}

/// Build and estimation rows of one tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HonestSplit {
    pub build: Vec<usize>,
    pub estimate: Vec<usize>,
}

fn honest_split(seed: u64, n: usize, cfg: &CausalForestConfig) -> HonestSplit {
    let mut rng = stream_rng(seed, 0xC5);
    let m = ((cfg.sample_fraction * n as f64).round() as usize).clamp(2.min(n), n);
    let mut sample = index::sample(&mut rng, n, m).into_vec();
    sample.shuffle(&mut rng);
    let n_est = ((cfg.honesty_fraction * m as f64).round() as usize).clamp(1, m - 1);
    let estimate = sample.split_off(m - n_est);
    HonestSplit { build: sample, estimate }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalForestModel {
    pub trees: Vec<CausalTree>,
    pub config: CausalForestConfig,
    pub n_train: usize,
    pub propensity: f64,
    outcome: Vec<f64>,
    treatment: Vec<u8>,
}

#[derive(Default, Clone, Copy)]
struct ArmAcc {
    n: [usize; 2],
    sum: [f64; 2],
}

impl ArmAcc {
    fn add(&mut self, a: u8, y: f64) {
        self.n[a as usize] += 1;
        self.sum[a as usize] += y;
    }

    fn plus(self, o: ArmAcc) -> ArmAcc {
        ArmAcc { n: [self.n[0] + o.n[0], self.n[1] + o.n[1]], sum: [self.sum[0] + o.sum[0], self.sum[1] + o.sum[1]] }
    }

    fn minus(self, o: ArmAcc) -> ArmAcc {
        ArmAcc { n: [self.n[0] - o.n[0], self.n[1] - o.n[1]], sum: [self.sum[0] - o.sum[0], self.sum[1] - o.sum[1]] }
    }

    fn total(&self) -> usize {
        self.n[0] + self.n[1]
    }

    fn effect(&self) -> f64 {
        self.sum[1] / self.n[1] as f64 - self.sum[0] / self.n[0] as f64
    }

    fn min_arm(&self) -> usize {
        self.n[0].min(self.n[1])
    }
}

struct TreeInput<'a> {
    binned: &'a BinnedFeatures,
    y: &'a [f64],
    a: &'a [u8],
    propensity: f64,
}

impl TreeInput<'_> {
    fn leaf(&self, rows: Vec<usize>) -> CausalLeaf {
        let mut leaf = CausalLeaf { rows: rows.iter().map(|&i| i as u32).collect(), ..CausalLeaf::default() };
        for &i in &rows {
            let (y, w) = (self.y[i], self.a[i] as f64 - self.propensity);
            leaf.sum_y += y;
            leaf.sum_a += w;
            leaf.sum_ay += w * y;
            leaf.sum_aa += w * w;
        }
        leaf
    }
}

fn grow_causal_tree(input: &TreeInput<'_>, split: HonestSplit, cfg: &CausalForestConfig, seed: u64) -> CausalTree {
    let mut rng = stream_rng(seed, 0xCF);
    let n_features = input.binned.n_features();
    let mtry = Some(cfg.effective_mtry(n_features));
    let mut nodes = vec![Node::Leaf(CausalLeaf::default())];
    let mut stack = vec![(0usize, 0usize, split.build, split.estimate)];
    let mut hist_build: Vec<ArmAcc> = Vec::new();
    let mut hist_est: Vec<ArmAcc> = Vec::new();

    while let Some((node, depth, build, estimate)) = stack.pop() {
        let mut best: Option<(f64, usize, u16)> = None;
        let depth_ok = cfg.max_depth.is_none_or(|d| depth < d);
        if depth_ok && build.len() >= 4 * cfg.min_leaf && estimate.len() >= 4 * cfg.min_leaf {
            let mut total_build = ArmAcc::default();
            for &i in &build {
                total_build.add(input.a[i], input.y[i]);
            }
            let mut total_est = ArmAcc::default();
            for &i in &estimate {
                total_est.add(input.a[i], 0.0);
            }
            for f in candidate_features(&mut rng, n_features, mtry) {
                let n_bins = input.binned.n_bins(f);
                if n_bins < 2 {
                    continue;
                }
                let codes = &input.binned.codes[f];
                hist_build.clear();
                hist_build.resize(n_bins, ArmAcc::default());
                hist_est.clear();
                hist_est.resize(n_bins, ArmAcc::default());
                for &i in &build {
                    hist_build[codes[i] as usize].add(input.a[i], input.y[i]);
                }
                for &i in &estimate {
                    hist_est[codes[i] as usize].add(input.a[i], 0.0);
                }
                let mut left = ArmAcc::default();
                let mut left_est = ArmAcc::default();
                for b in 0..n_bins - 1 {
                    left = left.plus(hist_build[b]);
                    left_est = left_est.plus(hist_est[b]);
                    let right = total_build.minus(left);
                    let right_est = total_est.minus(left_est);
                    if left.min_arm() < cfg.min_leaf
                        || right.min_arm() < cfg.min_leaf
                        || left_est.min_arm() < cfg.min_leaf
                        || right_est.min_arm() < cfg.min_leaf
                    {
                        continue;
                    }
                    let d = left.effect() - right.effect();
                    let gain = left.total() as f64 * right.total() as f64 * d * d;
                    if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                        best = Some((gain, f, b as u16));
                    }
                }
            }
        }

        let Some((_, feature, bin)) = best else {
            nodes[node] = Node::Leaf(input.leaf(estimate));
            continue;
        };
        let codes = &input.binned.codes[feature];
        let (build_l, build_r): (Vec<usize>, Vec<usize>) = build.iter().partition(|&&i| codes[i] <= bin);
        let (est_l, est_r): (Vec<usize>, Vec<usize>) = estimate.iter().partition(|&&i| codes[i] <= bin);
        let left = nodes.len();
        nodes.push(Node::Leaf(CausalLeaf::default()));
        nodes.push(Node::Leaf(CausalLeaf::default()));
        nodes[node] = Node::Split {
            feature,
            threshold: input.binned.edges[feature][bin as usize],
            bin,
            left,
            right: left + 1,
        };
        stack.push((left + 1, depth + 1, build_r, est_r));
        stack.push((left, depth + 1, build_l, est_l));
    }
    CausalTree { nodes, seed }
}

/// Fits the forest on `data` (design matrix with intercept in column 0).
pub fn fit_causal_forest(data: &EncodedTrial, config: &CausalForestConfig) -> Result<CausalForestModel> {
    data.require_both_arms()?;
    let x = features(&data.x);
    config.validate(x.ncols())?;
    let binned = BinnedFeatures::new(&x, config.max_bins);
    let y = data.outcome_f64();
    let input = TreeInput { binned: &binned, y: &y, a: &data.treatment, propensity: data.propensity };
    let n = data.n();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|b| {
            let seed = derive_seed(config.seed, b as u64);
            grow_causal_tree(&input, honest_split(seed, n, config), config, seed)
        })
        .collect();
    Ok(CausalForestModel {
        trees,
        config: *config,
        n_train: n,
        propensity: data.propensity,
        outcome: y,
        treatment: data.treatment.clone(),
    })
}

impl CausalForestModel {
    pub fn honest_split(&self, tree: usize) -> HonestSplit {
        honest_split(self.trees[tree].seed, self.n_train, &self.config)
    }

    /// Sparse `α(x)` over training rows for row `row` of the design matrix `x`.
    pub fn alpha_weights(&self, x: &DMatrix<f64>, row: usize) -> Vec<(usize, f64)> {
        let mut alpha = vec![0.0; self.n_train];
        let leaves: Vec<&CausalLeaf> = self
            .trees
            .iter()
            .map(|t| t.leaf(|f| x[(row, f + 1)]))
            .filter(|l| !l.rows.is_empty())
            .collect();
        assert!(!leaves.is_empty(), "every leaf reached by the query is empty");
        let b = leaves.len() as f64;
        for leaf in leaves {
            let w = 1.0 / (b * leaf.rows.len() as f64);
            for &i in &leaf.rows {
                alpha[i as usize] += w;
            }
        }
        alpha.into_iter().enumerate().filter(|&(_, w)| w > 0.0).collect()
    }

    /// α-weighted R-loss minimizer before clamping.
    pub fn raw_tau_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let (mut w, mut sy, mut sa, mut say, mut saa) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut reached = 0usize;
        for tree in &self.trees {
            let leaf = tree.leaf(|f| x[(row, f + 1)]);
            if leaf.rows.is_empty() {
                continue;
            }
            reached += 1;
            let c = 1.0 / leaf.rows.len() as f64;
            w += 1.0;
            sy += c * leaf.sum_y;
            sa += c * leaf.sum_a;
            say += c * leaf.sum_ay;
            saa += c * leaf.sum_aa;
        }
        assert!(reached > 0, "every leaf reached by the query is empty");
        let y_alpha = sy / w;
        if saa <= 0.0 {
            return 0.0;
        }
        (say - y_alpha * sa) / saa
    }

    pub fn predict_tau(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| clamp_unit(self.raw_tau_row(x, i))).collect()
    }

    /// The α-weighted R-loss at `tau` for query row `row`.
    pub fn weighted_r_loss(&self, x: &DMatrix<f64>, row: usize, tau: f64) -> f64 {
        let alpha = self.alpha_weights(x, row);
        let y_alpha: f64 = alpha.iter().map(|&(i, a)| a * self.outcome[i]).sum();
        alpha
            .iter()
            .map(|&(i, a)| {
                let r = (self.outcome[i] - y_alpha) - (self.treatment[i] as f64 - self.propensity) * tau;
                a * r * r
            })
            .sum()
    }
}

impl IteModel for CausalForestModel {
    fn predict_ite(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.predict_tau(x)
    }
}
