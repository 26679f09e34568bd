//! Weighted ridge regression, `min Σ wᵢ (yᵢ − xᵢᵀβ)² + λ Σ_{j≥1} βⱼ²`,
//! solved exactly through the penalized normal equations.

use nalgebra::{DMatrix, DVector};

use crate::error::{ItrError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub coefficients: DVector<f64>,
    pub l2_penalty: f64,
    pub weights: Option<Vec<f64>>,
}

impl RidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (x * &self.coefficients).iter().copied().collect()
    }
}

/// `x` carries the intercept in column 0, which is left unpenalized.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, lambda: f64) -> Result<RidgeModel> {
    if x.nrows() != y.len() {
        return Err(ItrError::LengthMismatch { left: x.nrows(), right: y.len() });
    }
    if lambda < 0.0 {
        return Err(ItrError::Config(format!("ridge penalty must be ≥ 0, got {lambda}")));
    }
    let mut xw = x.clone();
    let mut yw = DVector::from_column_slice(y);
    if let Some(w) = weights {
        if w.len() != y.len() {
            return Err(ItrError::LengthMismatch { left: w.len(), right: y.len() });
        }
        for (i, &wi) in w.iter().enumerate() {
            if wi < 0.0 {
                return Err(ItrError::Config("ridge weights must be non-negative".into()));
            }
            let s = wi.sqrt();
            xw.row_mut(i).scale_mut(s);
            yw[i] *= s;
        }
    }
    let mut gram = xw.tr_mul(&xw);
    for j in 1..gram.ncols() {
        gram[(j, j)] += lambda;
    }
    let rhs = xw.tr_mul(&yw);
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = gram.cholesky().ok_or(ItrError::RankDeficient)?;
    let coefficients = chol.solve(&rhs);
    // Cholesky can succeed on a numerically singular Gram matrix; check the pivots.
    let diag = chol.l_dirty().diagonal();
    if diag.iter().any(|&d| d * d < 1e-12 * scale) || coefficients.iter().any(|v| !v.is_finite()) {
        return Err(ItrError::RankDeficient);
    }
    Ok(RidgeModel { coefficients, l2_penalty: lambda, weights: weights.map(<[f64]>::to_vec) })
}
