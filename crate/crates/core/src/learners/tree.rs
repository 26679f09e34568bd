//! CART trees on pre-binned features.
//!
//! Each feature is cut at midpoints between consecutive distinct training values
//! (thinned to at most `max_bins` bins by quantile when a feature has more
//! distinct values). A split `bin ≤ b` is therefore the threshold test
//! `x ≤ edges[b]`, so training rows (routed by bin) and new rows (routed by
//! value) always land in the same leaf.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ItrError, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeMode {
    Classify,
    Regress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub mode: TreeMode,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; all when `None`.
    pub mtry: Option<usize>,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { mode: TreeMode::Classify, max_depth: None, min_leaf: 1, mtry: None, max_bins: 256, seed: 0 }
    }
}

impl TreeConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(ItrError::Config("min_leaf must be ≥ 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > n_features {
                return Err(ItrError::Config(format!("mtry must lie in 1..={n_features}, got {m}")));
            }
        }
        if self.max_bins < 2 || self.max_bins > u16::MAX as usize {
            return Err(ItrError::Config(format!("max_bins must lie in 2..=65535, got {}", self.max_bins)));
        }
        Ok(())
    }
}

/// Per-feature bin codes and cut points.
#[derive(Debug, Clone)]
pub struct BinnedFeatures {
    pub(crate) codes: Vec<Vec<u16>>,
    pub(crate) edges: Vec<Vec<f64>>,
}

impl BinnedFeatures {
    pub fn new(x: &DMatrix<f64>, max_bins: usize) -> BinnedFeatures {
        let mut codes = Vec::with_capacity(x.ncols());
        let mut edges = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mut sorted: Vec<f64> = col.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let mut distinct = sorted.clone();
            distinct.dedup();
            let cuts: Vec<f64> = if distinct.len() <= max_bins {
                distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let n = sorted.len();
                let mut cuts: Vec<f64> = (1..max_bins)
                    .filter_map(|q| {
                        let k = q * n / max_bins;
                        let hi = sorted[k];
                        // largest value strictly below `hi`
                        let lo_pos = sorted.partition_point(|&v| v < hi);
                        (lo_pos > 0).then(|| 0.5 * (sorted[lo_pos - 1] + hi))
                    })
                    .collect();
                cuts.dedup();
                cuts
            };
            codes.push(col.iter().map(|&v| cuts.partition_point(|&e| e < v) as u16).collect());
            edges.push(cuts);
        }
        BinnedFeatures { codes, edges }
    }

    pub fn n_features(&self) -> usize {
        self.codes.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.edges[feature].len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node<L> {
    Leaf(L),
    Split { feature: usize, threshold: f64, bin: u16, left: usize, right: usize },
}

/// Index of the leaf node reached by a row whose feature `f` has value `value(f)`.
pub(crate) fn descend<L>(nodes: &[Node<L>], value: impl Fn(usize) -> f64) -> usize {
    let mut k = 0;
    loop {
        match &nodes[k] {
            Node::Leaf(_) => return k,
            Node::Split { feature, threshold, left, right, .. } => {
                k = if value(*feature) <= *threshold { *left } else { *right };
            }
        }
    }
}

/// Picks `mtry` distinct features (all of them when `mtry` is `None`).
pub(crate) fn candidate_features(rng: &mut impl Rng, n_features: usize, mtry: Option<usize>) -> Vec<usize> {
    match mtry {
        Some(m) if m < n_features => index::sample(rng, n_features, m).into_vec(),
        _ => (0..n_features).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafValue {
    /// Weighted mean of the targets; the class-1 proportion for classification.
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub(crate) nodes: Vec<Node<LeafValue>>,
    pub mode: TreeMode,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub n_features: usize,
}

impl TreeModel {
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        match &self.nodes[descend(&self.nodes, |f| x[(row, f)])] {
            Node::Leaf(v) => v.mean,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Leaf means (class-1 probability in classification mode).
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(x, i)).collect()
    }

    /// Majority class per row; ties go to class 0.
    pub fn classify(&self, x: &DMatrix<f64>) -> Vec<bool> {
        self.predict(x).into_iter().map(|p| p > 0.5).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node<LeafValue>], k: usize) -> usize {
            match &nodes[k] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Feature and threshold of the root split, if any.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match &self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            Node::Leaf(_) => None,
        }
    }

    /// Every split as `(feature, threshold)`.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
                Node::Leaf(_) => None,
            })
            .collect()
    }
}

/// Rows in a node: the growing sample and, for honest trees, the estimation sample.
struct Pending {
    node: usize,
    depth: usize,
    grow: Vec<usize>,
    estimate: Vec<usize>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    count: usize,
    w: f64,
    wy: f64,
}

impl Acc {
    fn add(&mut self, w: f64, y: f64) {
        self.count += 1;
        self.w += w;
        self.wy += w * y;
    }

    fn sub(self, other: Acc) -> Acc {
        Acc { count: self.count - other.count, w: self.w - other.w, wy: self.wy - other.wy }
    }

    fn mean(self) -> f64 {
        if self.w > 0.0 {
            self.wy / self.w
        } else {
            0.0
        }
    }
}

/// Node impurity times node weight: Gini `2p(1−p)·W` or sum of squares about the mean.
/// Targets are assumed binary for classification; squares are tracked separately for regression.
fn impurity(mode: TreeMode, acc: Acc, wyy: f64) -> f64 {
    if acc.w <= 0.0 {
        return 0.0;
    }
    match mode {
        TreeMode::Classify => {
            let p = acc.wy / acc.w;
            2.0 * p * (1.0 - p) * acc.w
        }
        TreeMode::Regress => (wyy - acc.wy * acc.wy / acc.w).max(0.0),
    }
}

pub(crate) struct GrowInput<'a> {
    pub binned: &'a BinnedFeatures,
    pub y: &'a [f64],
    pub weights: Option<&'a [f64]>,
}

/// Greedy CART growth on `grow` rows (may repeat, as in a bootstrap sample).
/// With a non-empty `estimate` set, leaf values come from those rows instead and
/// every child must keep at least `min_leaf` of them.
pub(crate) fn grow_tree(input: &GrowInput<'_>, grow: Vec<usize>, estimate: Vec<usize>, config: &TreeConfig) -> TreeModel {
    let honest = !estimate.is_empty();
    let mut rng = stream_rng(config.seed, 0x7EE);
    let weight = |i: usize| input.weights.map_or(1.0, |w| w[i]);
    let mut nodes: Vec<Node<LeafValue>> = vec![Node::Leaf(LeafValue { mean: 0.0, count: 0 })];
    let mut stack = vec![Pending { node: 0, depth: 0, grow, estimate }];
    let n_features = input.binned.n_features();

    let mut hist_acc: Vec<Acc> = Vec::new();
    let mut hist_yy: Vec<f64> = Vec::new();
    let mut hist_est: Vec<usize> = Vec::new();

    while let Some(Pending { node, depth, grow, estimate }) = stack.pop() {
        let mut total = Acc::default();
        let mut total_yy = 0.0;
        for &i in &grow {
            let (w, y) = (weight(i), input.y[i]);
            total.add(w, y);
            total_yy += w * y * y;
        }
        let leaf_value = if honest {
            let mut est = Acc::default();
            for &i in &estimate {
                est.add(weight(i), input.y[i]);
            }
            LeafValue { mean: est.mean(), count: est.count }
        } else {
            LeafValue { mean: total.mean(), count: total.count }
        };
        let parent_impurity = impurity(config.mode, total, total_yy);
        let depth_ok = config.max_depth.is_none_or(|d| depth < d);
        let size_ok = grow.len() >= 2 * config.min_leaf && (!honest || estimate.len() >= 2 * config.min_leaf);
        if !depth_ok || !size_ok || parent_impurity <= 1e-12 {
            nodes[node] = Node::Leaf(leaf_value);
            continue;
        }

        let mut best: Option<(f64, usize, u16)> = None;
        for f in candidate_features(&mut rng, n_features, config.mtry) {
            let n_bins = input.binned.n_bins(f);
            if n_bins < 2 {
                continue;
            }
            let codes = &input.binned.codes[f];
            hist_acc.clear();
            hist_acc.resize(n_bins, Acc::default());
            hist_yy.clear();
            hist_yy.resize(n_bins, 0.0);
            for &i in &grow {
                let b = codes[i] as usize;
                let (w, y) = (weight(i), input.y[i]);
                hist_acc[b].add(w, y);
                hist_yy[b] += w * y * y;
            }
            if honest {
                hist_est.clear();
                hist_est.resize(n_bins, 0);
                for &i in &estimate {
                    hist_est[codes[i] as usize] += 1;
                }
            }
            let mut left = Acc::default();
            let mut left_yy = 0.0;
            let mut left_est = 0usize;
            for b in 0..n_bins - 1 {
                left.count += hist_acc[b].count;
                left.w += hist_acc[b].w;
                left.wy += hist_acc[b].wy;
                left_yy += hist_yy[b];
                if honest {
                    left_est += hist_est[b];
                }
                let right = total.sub(left);
                if left.count < config.min_leaf || right.count < config.min_leaf {
                    continue;
                }
                if honest && (left_est < config.min_leaf || estimate.len() - left_est < config.min_leaf) {
                    continue;
                }
                let gain = parent_impurity
                    - impurity(config.mode, left, left_yy)
                    - impurity(config.mode, right, total_yy - left_yy);
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, b as u16));
                }
            }
        }

        let Some((_, feature, bin)) = best else {
            nodes[node] = Node::Leaf(leaf_value);
            continue;
        };
        let codes = &input.binned.codes[feature];
        let (grow_l, grow_r): (Vec<usize>, Vec<usize>) = grow.iter().partition(|&&i| codes[i] <= bin);
        let (est_l, est_r): (Vec<usize>, Vec<usize>) = estimate.iter().partition(|&&i| codes[i] <= bin);
        let left = nodes.len();
        nodes.push(Node::Leaf(LeafValue { mean: 0.0, count: 0 }));
        nodes.push(Node::Leaf(LeafValue { mean: 0.0, count: 0 }));
        nodes[node] = Node::Split {
            feature,
            threshold: input.binned.edges[feature][bin as usize],
            bin,
            left,
            right: left + 1,
        };
        stack.push(Pending { node: left + 1, depth: depth + 1, grow: grow_r, estimate: est_r });
        stack.push(Pending { node: left, depth: depth + 1, grow: grow_l, estimate: est_l });
    }
    TreeModel { nodes, mode: config.mode, max_depth: config.max_depth, min_leaf: config.min_leaf, n_features }
}

/// Fits a single CART tree on all rows of `x` (features only, no intercept column).
pub fn fit_tree(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, config: &TreeConfig) -> Result<TreeModel> {
    if x.nrows() != y.len() {
        return Err(ItrError::LengthMismatch { left: x.nrows(), right: y.len() });
    }
    if y.is_empty() {
        return Err(ItrError::TooSmall("tree on zero rows".into()));
    }
    config.validate(x.ncols())?;
    if config.mode == TreeMode::Classify && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(ItrError::Config("classification targets must be 0/1".into()));
    }
    let binned = BinnedFeatures::new(x, config.max_bins);
    let input = GrowInput { binned: &binned, y, weights };
    Ok(grow_tree(&input, (0..y.len()).collect(), Vec::new(), config))
}
