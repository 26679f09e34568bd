//! Multiple correspondence analysis on the indicator matrix, plus binning helpers
//! for continuous covariates.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ItrError, Result};

/// One categorical column of the MCA input table.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalColumn {
    pub name: String,
    pub labels: Vec<String>,
}

impl CategoricalColumn {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Self {
        CategoricalColumn { name: name.into(), labels }
    }

    pub fn from_decisions(name: impl Into<String>, decisions: &[u8]) -> Self {
        Self::new(name, decisions.iter().map(|d| d.to_string()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McaResult {
    /// `(column, level)` for each row of `coordinates`.
    pub categories: Vec<(String, String)>,
    /// Category principal coordinates, one column per retained axis.
    pub coordinates: DMatrix<f64>,
    /// Principal inertia of every non-trivial axis, decreasing.
    pub inertia: Vec<f64>,
    pub total_inertia: f64,
    pub row_coordinates: Option<DMatrix<f64>>,
    pub dropped_columns: Vec<String>,
}

impl McaResult {
    pub fn explained(&self, axis: usize) -> f64 {
        self.inertia.get(axis).map_or(0.0, |v| v / self.total_inertia)
    }
}

/// Correspondence analysis of the 0/1 indicator matrix: eigen-decomposition of
/// `SᵀS` with `S = D_r^{-1/2}(P − rcᵀ)D_c^{-1/2}`; category coordinates are
/// `D_c^{-1/2} V Σ`.
pub fn mca(columns: &[CategoricalColumn], n_axes: usize, with_rows: bool) -> Result<McaResult> {
    let n = columns.first().map_or(0, |c| c.labels.len());
    if columns.iter().any(|c| c.labels.len() != n) {
        return Err(ItrError::Config("MCA columns have different lengths".into()));
    }
    let mut categories = Vec::new();
    let mut codes = Vec::new();
    let mut dropped = Vec::new();
    for col in columns {
        let mut levels: Vec<&String> = col.labels.iter().collect();
        levels.sort();
        levels.dedup();
        if levels.len() < 2 {
            log::warn!("MCA: dropping column `{}` with a single level", col.name);
            dropped.push(col.name.clone());
            continue;
        }
        let offset = categories.len();
        codes.push(col.labels.iter().map(|l| offset + levels.binary_search(&l).expect("level present")).collect::<Vec<_>>());
        categories.extend(levels.iter().map(|l| (col.name.clone(), (*l).clone())));
    }
    let q = codes.len();
    if q == 0 || n == 0 {
        return Err(ItrError::Config("MCA needs at least one column with two levels".into()));
    }
    let j = categories.len();
    let total = (n * q) as f64;
    let mut counts = vec![0.0; j];
    for col in &codes {
        for &c in col {
            counts[c] += 1.0;
        }
    }
    let mass: Vec<f64> = counts.iter().map(|c| c / total).collect();
    let row_mass = 1.0 / n as f64;
    let s = DMatrix::from_fn(n, j, |i, k| {
        let p = if codes.iter().any(|col| col[i] == k) { 1.0 / total } else { 0.0 };
        (p - row_mass * mass[k]) / (row_mass * mass[k]).sqrt()
    });
    let eig = SymmetricEigen::new(s.tr_mul(&s));
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n_axes = n_axes.min(j);
    let inertia: Vec<f64> = order.iter().take(j - q).map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total_inertia = (j - q) as f64 / q as f64;
    let mut coordinates = DMatrix::zeros(j, n_axes);
    let mut axes = DMatrix::zeros(j, n_axes);
    for (axis, &k) in order.iter().take(n_axes).enumerate() {
        let sigma = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        // fix the sign so results are reproducible across platforms
        let flip = if v.iter().fold(0.0, |acc: f64, &x| if x.abs() > acc.abs() { x } else { acc }) < 0.0 { -1.0 } else { 1.0 };
        for c in 0..j {
            axes[(c, axis)] = flip * v[c];
            coordinates[(c, axis)] = flip * v[c] * sigma / mass[c].sqrt();
        }
    }
    let row_coordinates = with_rows.then(|| (&s * &axes) / row_mass.sqrt());
    Ok(McaResult { categories, coordinates, inertia, total_inertia, row_coordinates, dropped_columns: dropped })
}

/// Labels each value by its quantile bin `q1..qk` (edges at the empirical
/// `i/k` quantiles).
pub fn bin_quantiles(values: &[f64], n_bins: usize) -> Result<Vec<String>> {
    if n_bins < 2 {
        return Err(ItrError::Config("at least two bins are required".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> =
        (1..n_bins).map(|i| sorted[((i * sorted.len()) / n_bins).min(sorted.len() - 1)]).collect();
    cuts.dedup();
    Ok(values.iter().map(|&v| format!("q{}", 1 + cuts.iter().filter(|&&c| v >= c).count())).collect())
}

/// Labels by explicit cut points: bin `k` holds `cuts[k-1] ≤ v < cuts[k]`.
pub fn bin_cuts(values: &[f64], cuts: &[f64]) -> Vec<String> {
    values.iter().map(|&v| format!("b{}", 1 + cuts.iter().filter(|&&c| v >= c).count())).collect()
}
