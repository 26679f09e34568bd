//! S-, T-, X-, DR- and R-learners over a [`BaseLearner`], and cross-fitting.
//!
//! All learners assume a known randomization probability `π` (the trial's
//! `propensity`). Effect estimates are clamped to `[−1, 1]`.

pub mod base;
pub mod crossfit;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use base::{BaseLearner, FittedBase};
pub use crossfit::{
    crossfit, crossfit_folds, crossfit_predict, Aggregate, CrossfitConfig, CrossfitModel, CrossfitOutput, TestPrediction,
};

use crate::dataset::EncodedTrial;
use crate::error::{ItrError, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::rule::{clamp_unit, IteModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetaLearnerKind {
    S,
    T,
    X,
    Dr,
    R,
}

impl MetaLearnerKind {
    pub const ALL: [MetaLearnerKind; 5] =
        [MetaLearnerKind::S, MetaLearnerKind::T, MetaLearnerKind::X, MetaLearnerKind::Dr, MetaLearnerKind::R];

    pub fn id(self) -> &'static str {
        match self {
            MetaLearnerKind::S => "SL",
            MetaLearnerKind::T => "TL",
            MetaLearnerKind::X => "XL",
            MetaLearnerKind::Dr => "DRL",
            MetaLearnerKind::R => "RL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaOptions {
    /// X-learner weight `w` in `τ̂ = w τ̂₀ + (1 − w) τ̂₁`.
    pub x_weight: f64,
    /// DR-learner: rotate the roles of the three subsamples and average.
    pub dr_crossfit_inner: bool,
    /// R-learner: folds for the out-of-fold outcome model.
    pub r_folds: usize,
    pub seed: u64,
}

impl Default for MetaOptions {
    fn default() -> Self {
        MetaOptions { x_weight: 0.5, dr_crossfit_inner: true, r_folds: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetaLearnerModel {
    S { mu: FittedBase },
    T { mu0: FittedBase, mu1: FittedBase },
    X { mu0: FittedBase, mu1: FittedBase, tau0: FittedBase, tau1: FittedBase, weight: f64 },
    Dr { stages: Vec<FittedBase> },
    R { tau: FittedBase },
}

impl MetaLearnerModel {
    pub fn kind(&self) -> MetaLearnerKind {
        match self {
            MetaLearnerModel::S { .. } => MetaLearnerKind::S,
            MetaLearnerModel::T { .. } => MetaLearnerKind::T,
            MetaLearnerModel::X { .. } => MetaLearnerKind::X,
            MetaLearnerModel::Dr { .. } => MetaLearnerKind::Dr,
            MetaLearnerModel::R { .. } => MetaLearnerKind::R,
        }
    }

    /// Effect estimates before clamping.
    pub fn raw_tau(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            MetaLearnerModel::S { mu } => {
                let n = x.nrows();
                let treated = mu.predict(&s_design(x, &vec![1.0; n]));
                let control = mu.predict(&s_design(x, &vec![0.0; n]));
                treated.iter().zip(&control).map(|(a, b)| a - b).collect()
            }
            MetaLearnerModel::T { mu0, mu1 } => {
                mu1.predict(x).iter().zip(mu0.predict(x)).map(|(a, b)| a - b).collect()
            }
            MetaLearnerModel::X { tau0, tau1, weight, .. } => tau0
                .predict(x)
                .iter()
                .zip(tau1.predict(x))
                .map(|(t0, t1)| weight * t0 + (1.0 - weight) * t1)
                .collect(),
            MetaLearnerModel::Dr { stages } => {
                let mut out = vec![0.0; x.nrows()];
                for stage in stages {
                    for (o, p) in out.iter_mut().zip(stage.predict(x)) {
                        *o += p / stages.len() as f64;
                    }
                }
                out
            }
            MetaLearnerModel::R { tau } => tau.predict(x),
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            MetaLearnerModel::S { mu } => mu.converged(),
            MetaLearnerModel::T { mu0, mu1 } => mu0.converged() && mu1.converged(),
            MetaLearnerModel::X { mu0, mu1, .. } => mu0.converged() && mu1.converged(),
            MetaLearnerModel::Dr { stages } => stages.iter().all(FittedBase::converged),
            MetaLearnerModel::R { tau } => tau.converged(),
        }
    }
}

impl IteModel for MetaLearnerModel {
    fn predict_ite(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.raw_tau(x).into_iter().map(clamp_unit).collect()
    }
}

pub fn fit_meta_learner(
    kind: MetaLearnerKind,
    data: &EncodedTrial,
    base: &BaseLearner,
    options: &MetaOptions,
) -> Result<MetaLearnerModel> {
    match kind {
        MetaLearnerKind::S => fit_s_learner(data, base, options.seed),
        MetaLearnerKind::T => fit_t_learner(data, base, options.seed),
        MetaLearnerKind::X => fit_x_learner(data, base, options.x_weight, options.seed),
        MetaLearnerKind::Dr => fit_dr_learner(data, base, options.dr_crossfit_inner, options.seed),
        MetaLearnerKind::R => fit_r_learner(data, base, options.r_folds, options.seed),
    }
}

/// `[x, a, a·x₁, …, a·x_p]`: the design with the treatment and its interaction with
/// every non-intercept column appended.
pub fn s_design(x: &DMatrix<f64>, a: &[f64]) -> DMatrix<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    DMatrix::from_fn(n, 2 * p, |i, j| {
        if j < p {
            x[(i, j)]
        } else if j == p {
            a[i]
        } else {
            a[i] * x[(i, j - p)]
        }
    })
}

pub fn fit_s_learner(data: &EncodedTrial, base: &BaseLearner, seed: u64) -> Result<MetaLearnerModel> {
    let a: Vec<f64> = data.treatment.iter().map(|&v| v as f64).collect();
    let mu = base.fit_probability(&s_design(&data.x, &a), &data.outcome_f64(), derive_seed(seed, 1))?;
    Ok(MetaLearnerModel::S { mu })
}

fn fit_arm(data: &EncodedTrial, base: &BaseLearner, arm: u8, seed: u64) -> Result<FittedBase> {
    let idx = data.arm(arm);
    let y: Vec<f64> = idx.iter().map(|&i| data.outcome[i] as f64).collect();
    base.fit_probability(&data.x.select_rows(&idx), &y, seed)
}

pub fn fit_t_learner(data: &EncodedTrial, base: &BaseLearner, seed: u64) -> Result<MetaLearnerModel> {
    data.require_both_arms()?;
    let mu0 = fit_arm(data, base, 0, derive_seed(seed, 10))?;
    let mu1 = fit_arm(data, base, 1, derive_seed(seed, 11))?;
    Ok(MetaLearnerModel::T { mu0, mu1 })
}

/// Second X-learner stage: regresses the imputed effects `d1 = Y¹ − μ̂₀(X¹)` on the
/// treated rows and `d0 = μ̂₁(X⁰) − Y⁰` on the control rows. Returns `(τ̂₀, τ̂₁)`.
pub fn x_learner_stage2(
    x1: &DMatrix<f64>,
    d1: &[f64],
    x0: &DMatrix<f64>,
    d0: &[f64],
    base: &BaseLearner,
    seed: u64,
) -> Result<(FittedBase, FittedBase)> {
    let tau1 = base.fit_regression(x1, d1, None, derive_seed(seed, 21))?;
    let tau0 = base.fit_regression(x0, d0, None, derive_seed(seed, 20))?;
    Ok((tau0, tau1))
}

pub fn fit_x_learner(data: &EncodedTrial, base: &BaseLearner, weight: f64, seed: u64) -> Result<MetaLearnerModel> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(ItrError::Config(format!("X-learner weight must lie in [0,1], got {weight}")));
    }
    let MetaLearnerModel::T { mu0, mu1 } = fit_t_learner(data, base, seed)? else { unreachable!() };
    let (treated, control) = (data.arm(1), data.arm(0));
    let (x1, x0) = (data.x.select_rows(&treated), data.x.select_rows(&control));
    let d1: Vec<f64> = mu0.predict(&x1).iter().zip(&treated).map(|(m, &i)| data.outcome[i] as f64 - m).collect();
    let d0: Vec<f64> = mu1.predict(&x0).iter().zip(&control).map(|(m, &i)| m - data.outcome[i] as f64).collect();
    let (tau0, tau1) = x_learner_stage2(&x1, &d1, &x0, &d0, base, seed)?;
    Ok(MetaLearnerModel::X { mu0, mu1, tau0, tau1, weight })
}

/// `φ = (A − π)/(π(1 − π)) · (Y − μ̂_A) + μ̂₁ − μ̂₀`; with `π = 1/2` the weight is `2(2A − 1)`.
pub fn dr_pseudo_outcome(a: u8, y: f64, mu0: f64, mu1: f64, propensity: f64) -> f64 {
    let mu_a = if a == 1 { mu1 } else { mu0 };
    (a as f64 - propensity) / (propensity * (1.0 - propensity)) * (y - mu_a) + mu1 - mu0
}

/// Random partition of `0..n` into `k` near-equal parts.
pub(crate) fn partition(n: usize, k: usize, seed: u64, stream: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, stream));
    let mut parts = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, &i) in perm.iter().enumerate() {
        parts[pos % k].push(i);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

fn complement(n: usize, part: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    for &i in part {
        keep[i] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// Splits the data in thirds; two thirds fit `μ̂₀, μ̂₁` (the propensity is known, so
/// no third is spent estimating it) and the pseudo-outcome is regressed on the
/// remaining third. With `crossfit_inner` the roles rotate and the three effect
/// models are averaged.
pub fn fit_dr_learner(data: &EncodedTrial, base: &BaseLearner, crossfit_inner: bool, seed: u64) -> Result<MetaLearnerModel> {
    let n = data.n();
    if n < 30 {
        return Err(ItrError::TooSmall(format!("DR-learner needs at least 30 patients, got {n}")));
    }
    data.require_both_arms()?;
    let thirds = partition(n, 3, seed, 30);
    let rotations = if crossfit_inner { 3 } else { 1 };
    let mut stages = Vec::with_capacity(rotations);
    for (r, target) in thirds.iter().enumerate().take(rotations) {
        let nuisance = data.select(&complement(n, target));
        nuisance.require_both_arms()?;
        let mu0 = fit_arm(&nuisance, base, 0, derive_seed(seed, 31 + 10 * r as u64))?;
        let mu1 = fit_arm(&nuisance, base, 1, derive_seed(seed, 32 + 10 * r as u64))?;
        let stage = data.select(target);
        let (m0, m1) = (mu0.predict(&stage.x), mu1.predict(&stage.x));
        let phi: Vec<f64> = (0..stage.n())
            .map(|i| dr_pseudo_outcome(stage.treatment[i], stage.outcome[i] as f64, m0[i], m1[i], data.propensity))
            .collect();
        stages.push(base.fit_regression(&stage.x, &phi, None, derive_seed(seed, 33 + 10 * r as u64))?);
    }
    Ok(MetaLearnerModel::Dr { stages })
}

/// Out-of-fold predictions of `E[Y | X]` from the pooled outcome model.
pub fn out_of_fold_outcome(data: &EncodedTrial, base: &BaseLearner, folds: usize, seed: u64) -> Result<Vec<f64>> {
    let n = data.n();
    if folds < 2 || folds > n {
        return Err(ItrError::Config(format!("out-of-fold outcome model needs 2..={n} folds, got {folds}")));
    }
    let y = data.outcome_f64();
    let mut out = vec![0.0; n];
    for (k, part) in partition(n, folds, seed, 40).iter().enumerate() {
        let train = complement(n, part);
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = base.fit_probability(&data.x.select_rows(&train), &ty, derive_seed(seed, 41 + k as u64))?;
        for (&i, p) in part.iter().zip(model.predict(&data.x.select_rows(part))) {
            out[i] = p;
        }
    }
    Ok(out)
}

/// Minimizes the R-loss given `μ̂`: a regression of `(Y − μ̂)/(A − π)` with weights `(A − π)²`.
pub fn r_learner_stage2(data: &EncodedTrial, mu_hat: &[f64], base: &BaseLearner, seed: u64) -> Result<FittedBase> {
    let pi = data.propensity;
    let mut target = Vec::with_capacity(data.n());
    let mut weights = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let w = data.treatment[i] as f64 - pi;
        target.push((data.outcome[i] as f64 - mu_hat[i]) / w);
        weights.push(w * w);
    }
    base.fit_regression(&data.x, &target, Some(&weights), seed)
}

pub fn fit_r_learner(data: &EncodedTrial, base: &BaseLearner, folds: usize, seed: u64) -> Result<MetaLearnerModel> {
    let mu_hat = out_of_fold_outcome(data, base, folds, seed)?;
    let tau = r_learner_stage2(data, &mu_hat, base, derive_seed(seed, 50))?;
    Ok(MetaLearnerModel::R { tau })
}

/// `L(β) = (1/n) Σ [(Yᵢ − μ̂ᵢ) − (Aᵢ − π) xᵢᵀβ]² + λ Σ_{j≥1} βⱼ²` for a linear effect.
pub struct RLoss<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub treatment: &'a [u8],
    pub mu_hat: &'a [f64],
    pub propensity: f64,
    pub lambda: f64,
}

impl RLoss<'_> {
    fn residuals(&self, beta: &DVector<f64>) -> Vec<(f64, f64)> {
        let fitted = self.x * beta;
        (0..self.y.len())
            .map(|i| {
                let w = self.treatment[i] as f64 - self.propensity;
                (self.y[i] - self.mu_hat[i] - w * fitted[i], w)
            })
            .collect()
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        let n = self.y.len() as f64;
        self.residuals(beta).iter().map(|(r, _)| r * r).sum::<f64>() / n
            + self.lambda * beta.rows(1, beta.len() - 1).norm_squared()
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let n = self.y.len() as f64;
        let coef = DVector::from_iterator(self.y.len(), self.residuals(beta).iter().map(|(r, w)| -2.0 * r * w / n));
        let mut g = self.x.tr_mul(&coef);
        for j in 1..g.len() {
            g[j] += 2.0 * self.lambda * beta[j];
        }
        g
    }
}
