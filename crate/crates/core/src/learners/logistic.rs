//! L2-penalized weighted logistic regression fitted by damped Newton (IRLS).
//!
//! Objective, with the intercept (column 0) unpenalized:
//!
//! `L(β) = (1/n) Σ wᵢ [log(1 + exp(xᵢᵀβ)) − yᵢ xᵢᵀβ] + l2 Σ_{j≥1} βⱼ²`

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ItrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { l2: 1e-4, tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coefficients: DVector<f64>,
    pub l2_penalty: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective value after each accepted step, starting at β = 0.
    pub loss_history: Vec<f64>,
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.coefficients
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear_predictor(x).iter().map(|&eta| sigmoid(eta)).collect()
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
pub fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// The penalized weighted logistic loss as a differentiable function of β.
pub struct LogisticObjective<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub weights: Option<&'a [f64]>,
    pub l2: f64,
}

impl LogisticObjective<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.x * beta;
        let n = self.y.len() as f64;
        let data: f64 = eta.iter().enumerate().map(|(i, &e)| self.weight(i) * (softplus(e) - self.y[i] * e)).sum();
        data / n + self.l2 * beta.rows(1, beta.len() - 1).norm_squared()
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let eta = self.x * beta;
        let n = self.y.len() as f64;
        let resid = DVector::from_iterator(
            eta.len(),
            eta.iter().enumerate().map(|(i, &e)| self.weight(i) * (sigmoid(e) - self.y[i]) / n),
        );
        let mut g = self.x.tr_mul(&resid);
        for j in 1..g.len() {
            g[j] += 2.0 * self.l2 * beta[j];
        }
        g
    }

    pub fn hessian(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let eta = self.x * beta;
        let n = self.y.len() as f64;
        let mut weighted = self.x.clone();
        for (i, &e) in eta.iter().enumerate() {
            let p = sigmoid(e);
            let s = (self.weight(i) * p * (1.0 - p) / n).sqrt();
            weighted.row_mut(i).scale_mut(s);
        }
        let mut h = weighted.tr_mul(&weighted);
        for j in 1..h.ncols() {
            h[(j, j)] += 2.0 * self.l2;
        }
        h
    }

    /// Perfect separation of the positive-weight samples with hard labels.
    fn separated(&self, beta: &DVector<f64>) -> bool {
        let eta = self.x * beta;
        eta.iter().enumerate().all(|(i, &e)| {
            self.weight(i) == 0.0
                || (self.y[i] == 1.0 && e > 0.0)
                || (self.y[i] == 0.0 && e < 0.0)
        })
    }
}

/// Solves `h · step = g`, adding diagonal jitter when `h` is numerically singular.
fn newton_step(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut hj = h.clone();
        for j in 0..hj.ncols() {
            hj[(j, j)] += jitter;
        }
        if let Some(chol) = hj.cholesky() {
            let step = chol.solve(g);
            if step.iter().all(|v| v.is_finite()) {
                return step;
            }
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
    }
    g.clone()
}

/// Damped Newton minimization shared by the logistic base learner and the
/// benefit-score methods. Stops once the gradient max-norm drops below `tol`
/// (unless the unpenalized problem is separated) or after `max_iter` steps.
pub(crate) fn minimize(objective: &LogisticObjective<'_>, tol: f64, max_iter: usize) -> LogisticModel {
    let p = objective.x.ncols();
    let mut beta = DVector::zeros(p);
    let mut loss = objective.value(&beta);
    let mut history = vec![loss];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let g = objective.gradient(&beta);
        if g.amax() < tol && !(objective.l2 == 0.0 && objective.separated(&beta)) {
            converged = true;
            break;
        }
        iterations += 1;
        let step = newton_step(&objective.hessian(&beta), &g);
        let slope = -g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta - &step * t;
            let value = objective.value(&candidate);
            if value.is_finite() && value <= loss + 1e-4 * t * slope {
                beta = candidate;
                loss = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent possible at machine precision
            converged = g.amax() < tol.sqrt();
            break;
        }
        history.push(loss);
    }
    LogisticModel { coefficients: beta, l2_penalty: objective.l2, converged, iterations, loss_history: history }
}

/// Fits `P(y = 1 | x) = σ(xᵀβ)`. `x` must carry the intercept in column 0.
/// `y` may be fractional in [0, 1].
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, config: &LogisticConfig) -> Result<LogisticModel> {
    if x.nrows() != y.len() {
        return Err(ItrError::LengthMismatch { left: x.nrows(), right: y.len() });
    }
    if let Some(w) = weights {
        if w.len() != y.len() {
            return Err(ItrError::LengthMismatch { left: w.len(), right: y.len() });
        }
    }
    if config.l2 < 0.0 {
        return Err(ItrError::Config(format!("l2 penalty must be ≥ 0, got {}", config.l2)));
    }
    if y.is_empty() {
        return Err(ItrError::TooSmall("logistic regression on zero rows".into()));
    }
    let objective = LogisticObjective { x, y, weights, l2: config.l2 };
    let model = minimize(&objective, config.tol, config.max_iter);
    if !model.converged {
        log::debug!("logistic fit stopped after {} iterations without converging", model.iterations);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] })
    }

    #[test]
    fn all_positive_labels() {
        let x = design(&[-1.0, 0.0, 1.0, 2.0]);
        let m = fit_logistic(&x, &[1.0; 4], None, &LogisticConfig { l2: 1.0, ..Default::default() }).unwrap();
        assert!(m.coefficients[0] > 5.0);
        assert!(m.coefficients[1].abs() < 1e-6);
        assert!(m.predict_proba(&x).iter().all(|&p| p > 0.5));
    }

    #[test]
    fn two_point_matches_grid_minimizer() {
        let x = design(&[0.0, 1.0]);
        let y = [0.0, 1.0];
        let obj = LogisticObjective { x: &x, y: &y, weights: None, l2: 1.0 };
        let m = fit_logistic(&x, &y, None, &LogisticConfig { l2: 1.0, ..Default::default() }).unwrap();
        assert!(m.converged);
        // coarse grid then a fine grid around the coarse minimizer
        let grid_min = |c0: f64, c1: f64, half: f64, steps: usize| {
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for i in 0..=steps {
                for j in 0..=steps {
                    let b0 = c0 - half + 2.0 * half * i as f64 / steps as f64;
                    let b1 = c1 - half + 2.0 * half * j as f64 / steps as f64;
                    let v = obj.value(&DVector::from_vec(vec![b0, b1]));
                    if v < best.0 {
                        best = (v, b0, b1);
                    }
                }
            }
            best
        };
        let coarse = grid_min(0.0, 0.0, 4.0, 400);
        let fine = grid_min(coarse.1, coarse.2, 0.04, 400);
        assert!((m.coefficients[0] - fine.1).abs() < 1e-3, "{} vs {}", m.coefficients[0], fine.1);
        assert!((m.coefficients[1] - fine.2).abs() < 1e-3, "{} vs {}", m.coefficients[1], fine.2);
    }

    #[test]
    fn weight_scaling_keeps_argmin() {
        let x = design(&[-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]);
        let y = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let cfg = LogisticConfig { l2: 0.0, ..Default::default() };
        let a = fit_logistic(&x, &y, Some(&[1.0; 7]), &cfg).unwrap();
        let b = fit_logistic(&x, &y, Some(&[2.0; 7]), &cfg).unwrap();
        assert!((a.coefficients - b.coefficients).amax() < 1e-8);
    }

    #[test]
    fn separable_data_does_not_converge() {
        let x = design(&[-2.0, -1.0, 1.0, 2.0]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let m = fit_logistic(&x, &y, None, &LogisticConfig { l2: 0.0, ..Default::default() }).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 100);
        assert!(m.coefficients[1] > 5.0);
    }

    #[test]
    fn loss_is_monotone() {
        let x = DMatrix::from_fn(50, 3, |i, j| if j == 0 { 1.0 } else { ((i * 7 + j * 13) % 11) as f64 / 5.0 - 1.0 });
        let y: Vec<f64> = (0..50).map(|i| ((i * 31) % 3 == 0) as u8 as f64).collect();
        let m = fit_logistic(&x, &y, None, &LogisticConfig::default()).unwrap();
        assert!(m.converged);
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let x = DMatrix::from_fn(30, 4, |i, j| if j == 0 { 1.0 } else { (((i * 13 + j * 7) % 17) as f64 - 8.0) / 6.0 });
        let y: Vec<f64> = (0..30).map(|i| ((i * 5) % 7 < 3) as u8 as f64).collect();
        let w: Vec<f64> = (0..30).map(|i| 0.5 + (i % 3) as f64).collect();
        let obj = LogisticObjective { x: &x, y: &y, weights: Some(&w), l2: 0.05 };
        let h = 1e-5;
        for k in 0..10 {
            let beta = DVector::from_fn(4, |j, _| (((k * 11 + j * 3) % 9) as f64 - 4.0) / 4.0);
            let g = obj.gradient(&beta);
            for j in 0..4 {
                let mut up = beta.clone();
                let mut down = beta.clone();
                up[j] += h;
                down[j] -= h;
                let fd = (obj.value(&up) - obj.value(&down)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-3), "{fd} vs {}", g[j]);
            }
        }
    }
}
