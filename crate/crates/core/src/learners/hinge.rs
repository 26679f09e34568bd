//! Linear classifier minimizing a weighted hinge loss with an L2 penalty on the slopes.
//!
//! `F(β) = (1/Σw) Σ wᵢ max(0, 1 − lᵢ xᵢᵀβ) + λ Σ_{j≥1} βⱼ²`, labels `lᵢ ∈ {−1, +1}`,
//! intercept in column 0 of `x`. Normalizing by `Σw` rather than `n` keeps zero-weight
//! rows exactly inert.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ItrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeConfig {
    pub epochs: usize,
}

impl Default for HingeConfig {
    fn default() -> Self {
        HingeConfig { epochs: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedHingeModel {
    /// Intercept first, then slopes.
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub objective: f64,
    /// Set when every weight was zero; the model is then identically zero.
    pub all_weights_zero: bool,
}

impl WeightedHingeModel {
    pub fn decision_function(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (x * &self.coefficients).iter().copied().collect()
    }

    /// Norm of the slope coefficients.
    pub fn rule_norm(&self) -> f64 {
        self.coefficients.rows(1, self.coefficients.len() - 1).norm()
    }
}

pub fn hinge_objective(x: &DMatrix<f64>, labels: &[f64], weights: &[f64], lambda: f64, beta: &DVector<f64>) -> f64 {
    let total: f64 = weights.iter().sum();
    let scores = x * beta;
    let loss: f64 = if total > 0.0 {
        scores.iter().zip(labels).zip(weights).map(|((s, l), w)| w * (1.0 - l * s).max(0.0)).sum::<f64>() / total
    } else {
        0.0
    };
    loss + lambda * beta.rows(1, beta.len() - 1).norm_squared()
}

/// A subgradient of [`hinge_objective`]; at a kink the hinge contributes zero.
pub fn hinge_subgradient(
    x: &DMatrix<f64>,
    labels: &[f64],
    weights: &[f64],
    lambda: f64,
    beta: &DVector<f64>,
) -> DVector<f64> {
    let total: f64 = weights.iter().sum();
    let scores = x * beta;
    let coef = DVector::from_iterator(
        labels.len(),
        scores.iter().zip(labels).zip(weights).map(|((s, l), w)| {
            if total > 0.0 && l * s < 1.0 {
                -w * l / total
            } else {
                0.0
            }
        }),
    );
    let mut g = x.tr_mul(&coef);
    for j in 1..g.len() {
        g[j] += 2.0 * lambda * beta[j];
    }
    g
}

/// Exact minimizer of the objective over the intercept with the slopes held fixed.
fn best_intercept(x: &DMatrix<f64>, labels: &[f64], weights: &[f64], beta: &DVector<f64>) -> f64 {
    let mut slopes_only = beta.clone();
    slopes_only[0] = 0.0;
    let partial = x * &slopes_only;
    // each active hinge is linear in b with a knot at lᵢ − sᵢ
    let mut knots: Vec<(f64, f64)> = partial
        .iter()
        .zip(labels)
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|((s, l), &w)| (l - s, w))
        .collect();
    if knots.is_empty() {
        return beta[0];
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positive: f64 = labels.iter().zip(weights).filter(|(&l, _)| l > 0.0).map(|(_, w)| w).sum();
    let mut slope = -positive;
    for (knot, w) in knots {
        slope += w;
        if slope >= 0.0 {
            return knot;
        }
    }
    beta[0]
}

/// Projected subgradient descent: Pegasos steps `1/(2λt)` on the slopes (projected
/// onto the ball that must contain the optimum), `B/√t` steps on the intercept, and
/// averaging over the second half of the run. The returned coefficients are the best
/// of the averaged iterate (with an exact intercept refit), the last iterate and zero.
pub fn fit_weighted_hinge(
    x: &DMatrix<f64>,
    labels: &[f64],
    weights: &[f64],
    lambda: f64,
    config: &HingeConfig,
) -> Result<WeightedHingeModel> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(ItrError::LengthMismatch { left: n, right: labels.len() });
    }
    if weights.len() != n {
        return Err(ItrError::LengthMismatch { left: n, right: weights.len() });
    }
    if !(lambda > 0.0) {
        return Err(ItrError::Config(format!("hinge penalty must be > 0, got {lambda}")));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(ItrError::Config("hinge weights must be finite and non-negative".into()));
    }
    if labels.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(ItrError::Config("hinge labels must be ±1".into()));
    }
    let p = x.ncols();
    let zero = DVector::zeros(p);
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        log::warn!("weighted hinge fit with all weights zero; returning the zero model");
        return Ok(WeightedHingeModel {
            coefficients: zero,
            lambda,
            weights: weights.to_vec(),
            objective: 0.0,
            all_weights_zero: true,
        });
    }

    let radius = (1.0 / lambda).sqrt();
    let max_row_norm =
        (0..n).filter(|&i| weights[i] > 0.0).map(|i| x.row(i).columns(1, p - 1).norm()).fold(0.0, f64::max);
    let intercept_bound = 1.0 + radius * max_row_norm;

    let mut beta = zero.clone();
    let mut average = zero.clone();
    let mut averaged = 0usize;
    let burn_in = config.epochs / 2;
    for t in 1..=config.epochs {
        let g = hinge_subgradient(x, labels, weights, lambda, &beta);
        let slope_step = 1.0 / (2.0 * lambda * t as f64);
        for j in 1..p {
            beta[j] -= slope_step * g[j];
        }
        let norm = beta.rows(1, p - 1).norm();
        if norm > radius {
            let shrink = radius / norm;
            for j in 1..p {
                beta[j] *= shrink;
            }
        }
        beta[0] = (beta[0] - intercept_bound / (t as f64).sqrt() * g[0]).clamp(-intercept_bound, intercept_bound);
        if t > burn_in {
            averaged += 1;
            average += (&beta - &average) / averaged as f64;
        }
    }
    let mut polished = average.clone();
    polished[0] = best_intercept(x, labels, weights, &polished);

    let objective = |b: &DVector<f64>| hinge_objective(x, labels, weights, lambda, b);
    let candidates = [polished, average, beta, zero];
    let (coefficients, value) = candidates
        .into_iter()
        .map(|c| {
            let v = objective(&c);
            (c, v)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty candidates");
    Ok(WeightedHingeModel { coefficients, lambda, weights: weights.to_vec(), objective: value, all_weights_zero: false })
}
