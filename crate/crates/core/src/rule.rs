//! Interfaces shared by every fitted method.

use nalgebra::DMatrix;

/// Produces individual treatment effect estimates `τ̂(x) ∈ [−1, 1]` for rows of a
/// design matrix (intercept in column 0).
pub trait IteModel: Send + Sync {
    fn predict_ite(&self, x: &DMatrix<f64>) -> Vec<f64>;
}

/// A fitted treatment rule. `decide` is `1{score > 0}`.
pub trait TreatmentRule: Send + Sync {
    fn score(&self, x: &DMatrix<f64>) -> Vec<f64>;

    fn decide(&self, x: &DMatrix<f64>) -> Vec<u8> {
        self.score(x).iter().map(|&s| (s > 0.0) as u8).collect()
    }

    /// Predicted benefit used for the c-for-benefit; `None` for rules that only
    /// produce a region.
    fn benefit_score(&self, _x: &DMatrix<f64>) -> Option<Vec<f64>> {
        None
    }
}

/// Treats when the estimated effect exceeds `threshold` (strictly).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRule<M> {
    pub model: M,
    pub threshold: f64,
}

impl<M: IteModel> ThresholdRule<M> {
    pub fn new(model: M) -> Self {
        ThresholdRule { model, threshold: 0.0 }
    }
}

impl<M: IteModel> TreatmentRule for ThresholdRule<M> {
    fn score(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.model.predict_ite(x).into_iter().map(|t| t - self.threshold).collect()
    }

    fn decide(&self, x: &DMatrix<f64>) -> Vec<u8> {
        self.model.predict_ite(x).into_iter().map(|t| (t > self.threshold) as u8).collect()
    }

    fn benefit_score(&self, x: &DMatrix<f64>) -> Option<Vec<f64>> {
        Some(self.model.predict_ite(x))
    }
}

impl<M: IteModel + ?Sized> IteModel for Box<M> {
    fn predict_ite(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (**self).predict_ite(x)
    }
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}
