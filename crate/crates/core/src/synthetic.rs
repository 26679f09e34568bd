//! Simulated two-arm trials with known response functions.
//!
//! Covariates are `k` independent standard normals followed by `m` independent
//! fair binary indicators. The control response is `μ₀(x) = σ(b₀ + bᵀx)` and the
//! treated response `μ₁(x) = μ₀(x) + τ(x)`, both clipped to `[0.02, 0.98]`; the
//! true effect is the clipped difference.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariate, TrialDataset};
use crate::error::{ItrError, Result};
use crate::evaluation::{value, Estimate, Metric};
use crate::learners::sigmoid;
use crate::rng::stream_rng;

const CLIP_LO: f64 = 0.02;
const CLIP_HI: f64 = 0.98;
const QUADRATURE_POINTS: usize = 1_000_000;
const QUADRATURE_SEED: u64 = 0x0A11_CE5E_ED00_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Effect {
    Null,
    Constant { delta: f64 },
    /// `δ · 1{x_feature > cut}`
    Threshold { delta: f64, feature: usize, cut: f64 },
    /// `intercept + Σ weightsⱼ xⱼ`
    Linear { intercept: f64, weights: Vec<f64> },
}

impl Effect {
    pub fn raw(&self, x: &[f64]) -> f64 {
        match self {
            Effect::Null => 0.0,
            Effect::Constant { delta } => *delta,
            Effect::Threshold { delta, feature, cut } => {
                if x[*feature] > *cut {
                    *delta
                } else {
                    0.0
                }
            }
            Effect::Linear { intercept, weights } => intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub n_continuous: usize,
    pub n_binary: usize,
    pub effect: Effect,
    /// Intercept followed by one slope per covariate.
    pub baseline: Vec<f64>,
    /// Patients are spread uniformly over this many centers (0 = no center column).
    pub n_centers: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Five continuous and two binary covariates, baseline `σ(−0.8 + 0.3 Σx)`, 20 centers.
    pub fn new(n: usize, effect: Effect, seed: u64) -> Self {
        let (k, m) = (5, 2);
        let mut baseline = vec![-0.8];
        baseline.extend(std::iter::repeat_n(0.3, k + m));
        ScenarioSpec { n, n_continuous: k, n_binary: m, effect, baseline, n_centers: 20, seed }
    }

    pub fn threshold(n: usize, seed: u64) -> Self {
        Self::new(n, Effect::Threshold { delta: 0.4, feature: 0, cut: 0.0 }, seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScenarioSpec { seed, ..self.clone() }
    }

    pub fn with_n(&self, n: usize) -> Self {
        ScenarioSpec { n, ..self.clone() }
    }

    pub fn n_covariates(&self) -> usize {
        self.n_continuous + self.n_binary
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.n_covariates();
        if self.baseline.len() != p + 1 {
            return Err(ItrError::Config(format!("baseline needs {} coefficients, got {}", p + 1, self.baseline.len())));
        }
        match &self.effect {
            Effect::Threshold { feature, .. } if *feature >= p => {
                Err(ItrError::Config(format!("threshold feature {feature} out of range (p = {p})")))
            }
            Effect::Linear { weights, .. } if weights.len() != p => {
                Err(ItrError::Config(format!("linear effect needs {p} weights, got {}", weights.len())))
            }
            _ => Ok(()),
        }
    }

    fn draw_covariates(&self, rng: &mut impl Rng, row: &mut [f64]) {
        for v in row.iter_mut().take(self.n_continuous) {
            *v = rng.sample(StandardNormal);
        }
        for v in row.iter_mut().skip(self.n_continuous) {
            *v = rng.random_bool(0.5) as u8 as f64;
        }
    }

    /// `(μ₀, μ₁, clipped)` at raw covariates `x`.
    pub fn responses(&self, x: &[f64]) -> (f64, f64, bool) {
        let eta = self.baseline[0] + self.baseline[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        let base = sigmoid(eta);
        let treated = base + self.effect.raw(x);
        let mu0 = base.clamp(CLIP_LO, CLIP_HI);
        let mu1 = treated.clamp(CLIP_LO, CLIP_HI);
        (mu0, mu1, mu0 != base || mu1 != treated)
    }
}

/// Ground truth of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub spec: ScenarioSpec,
    /// Value of the optimal rule, `E[μ₀ + τ·1{τ > 0}]`.
    pub v_star: f64,
    pub v_star_se: f64,
    pub mean_mu0: f64,
    pub mean_mu1: f64,
    /// Share of quadrature points where either response was clipped.
    pub clip_rate: f64,
}

impl Oracle {
    /// Monte Carlo quadrature over 10⁶ covariate draws from a fixed stream.
    pub fn new(spec: &ScenarioSpec) -> Result<Oracle> {
        spec.validate()?;
        let mut rng = stream_rng(QUADRATURE_SEED, 0);
        let mut row = vec![0.0; spec.n_covariates()];
        let (mut sum, mut sum_sq, mut s0, mut s1, mut clipped) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for _ in 0..QUADRATURE_POINTS {
            spec.draw_covariates(&mut rng, &mut row);
            let (mu0, mu1, c) = spec.responses(&row);
            let best = mu0.max(mu1);
            sum += best;
            sum_sq += best * best;
            s0 += mu0;
            s1 += mu1;
            clipped += c as usize;
        }
        let m = QUADRATURE_POINTS as f64;
        let clip_rate = clipped as f64 / m;
        if clip_rate > 0.10 {
            return Err(ItrError::IllPosed { clipped: 100.0 * clip_rate });
        }
        let v_star = sum / m;
        let var = (sum_sq / m - v_star * v_star).max(0.0);
        Ok(Oracle {
            spec: spec.clone(),
            v_star,
            v_star_se: (var / m).sqrt(),
            mean_mu0: s0 / m,
            mean_mu1: s1 / m,
            clip_rate,
        })
    }

    pub fn tau(&self, x: &[f64]) -> f64 {
        let (mu0, mu1, _) = self.spec.responses(x);
        mu1 - mu0
    }

    pub fn optimal_decision(&self, x: &[f64]) -> u8 {
        (self.tau(x) > 0.0) as u8
    }
}

/// A generated trial with its per-patient truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrial {
    pub data: TrialDataset,
    /// Raw covariates, one row per patient.
    pub raw: DMatrix<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub tau: Vec<f64>,
}

impl SyntheticTrial {
    pub fn optimal_decisions(&self) -> Vec<u8> {
        self.tau.iter().map(|&t| (t > 0.0) as u8).collect()
    }
}

/// Draws `spec.n` patients: covariates, `A ~ Bernoulli(1/2)`, `Y ~ Bernoulli(μ_A(x))`.
pub fn generate(spec: &ScenarioSpec) -> Result<(SyntheticTrial, Oracle)> {
    let oracle = Oracle::new(spec)?;
    let trial = draw_trial(spec)?;
    Ok((trial, oracle))
}

/// The patient draw alone, for callers that already hold the scenario's [`Oracle`].
pub fn draw_trial(spec: &ScenarioSpec) -> Result<SyntheticTrial> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.n_covariates());
    let mut rng = stream_rng(spec.seed, 0x5E);
    let mut raw = DMatrix::zeros(n, p);
    let mut row = vec![0.0; p];
    let (mut mu0, mut mu1, mut tau) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut treatment, mut outcome, mut center) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        spec.draw_covariates(&mut rng, &mut row);
        for (j, &v) in row.iter().enumerate() {
            raw[(i, j)] = v;
        }
        let (m0, m1, _) = spec.responses(&row);
        let a = rng.random_bool(0.5) as u8;
        let y = rng.random_bool(if a == 1 { m1 } else { m0 }) as u8;
        mu0.push(m0);
        mu1.push(m1);
        tau.push(m1 - m0);
        treatment.push(a);
        outcome.push(y);
        if spec.n_centers > 0 {
            center.push(format!("c{}", 1 + rng.random_range(0..spec.n_centers)));
        }
    }
    let mut covariates = Vec::with_capacity(p);
    for j in 0..spec.n_continuous {
        covariates.push(Covariate::continuous(format!("x{}", j + 1), raw.column(j).iter().copied().collect()));
    }
    for j in 0..spec.n_binary {
        let labels: Vec<String> = raw.column(spec.n_continuous + j).iter().map(|&v| (v as u8).to_string()).collect();
        covariates.push(Covariate::categorical(format!("b{}", j + 1), &labels));
    }
    let data = TrialDataset::new(covariates, treatment, outcome, (spec.n_centers > 0).then_some(center))?;
    Ok(SyntheticTrial { data, raw, mu0, mu1, tau })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    /// Root mean squared error of the effect estimates, when the method has them.
    pub rmse: Option<f64>,
    /// Agreement of the decisions with the optimal rule.
    pub accuracy: f64,
    /// Empirical value of the rule on the trial.
    pub value: Metric<Estimate>,
    /// `V* − V̂(rule)`
    pub shortfall: Option<f64>,
    /// `V* − mean(μ_{r(x)}(x))`, free of outcome noise.
    pub expected_shortfall: f64,
}

/// Scores a method's effect estimates and decisions on a synthetic trial.
pub fn oracle_scores(tau_hat: Option<&[f64]>, decisions: &[u8], trial: &SyntheticTrial, oracle: &Oracle) -> Result<OracleReport> {
    let n = trial.tau.len();
    if decisions.len() != n {
        return Err(ItrError::LengthMismatch { left: decisions.len(), right: n });
    }
    let rmse = match tau_hat {
        Some(t) if t.len() != n => return Err(ItrError::LengthMismatch { left: t.len(), right: n }),
        Some(t) => Some((t.iter().zip(&trial.tau).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt()),
        None => None,
    };
    let optimal = trial.optimal_decisions();
    let accuracy = decisions.iter().zip(&optimal).filter(|(a, b)| a == b).count() as f64 / n as f64;
    let value = value(decisions, &trial.data.treatment, &trial.data.outcome)?;
    let shortfall = value.as_ref().ok().map(|v| oracle.v_star - v.estimate);
    let expected = (0..n).map(|i| if decisions[i] == 1 { trial.mu1[i] } else { trial.mu0[i] }).sum::<f64>() / n as f64;
    Ok(OracleReport { rmse, accuracy, value, shortfall, expected_shortfall: oracle.v_star - expected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ingest_csv, Schema};

    #[test]
    fn null_scenario_treats_nobody() {
        let (trial, oracle) = generate(&ScenarioSpec::new(500, Effect::Null, 1)).unwrap();
        assert!(trial.optimal_decisions().iter().all(|&d| d == 0));
        assert_eq!(oracle.v_star, oracle.mean_mu0);
    }

    #[test]
    fn constant_scenario_shifts_value() {
        let (trial, oracle) = generate(&ScenarioSpec::new(500, Effect::Constant { delta: 0.2 }, 1)).unwrap();
        assert!(trial.optimal_decisions().iter().all(|&d| d == 1));
        // clipping at 0.98 trims a sliver of the shift
        assert!(oracle.clip_rate < 0.01);
        assert!((oracle.v_star - oracle.mean_mu0 - 0.2).abs() < 0.2 * oracle.clip_rate + 1e-12);
    }

    #[test]
    fn threshold_v_star_by_independent_quadrature() {
        let spec = ScenarioSpec::threshold(10, 3);
        let oracle = Oracle::new(&spec).unwrap();
        // midpoint rule over x₁ and over z, where 0.6·z is the contribution of the
        // other four normals; the binary sum is Binomial(2, 1/2) and enumerated
        let mut total = 0.0;
        let grid = 600;
        let (lo, hi) = (-8.0, 8.0);
        let h = (hi - lo) / grid as f64;
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for b in 0..=2 {
            let pb = [0.25, 0.5, 0.25][b];
            for i in 0..grid {
                let x1 = lo + (i as f64 + 0.5) * h;
                for j in 0..grid {
                    // sum of four other N(0,1) covariates times 0.3 has sd 0.6
                    let z = lo + (j as f64 + 0.5) * h;
                    let eta = -0.8 + 0.3 * x1 + 0.6 * z + 0.3 * b as f64;
                    let base = sigmoid(eta);
                    let mu0 = base.clamp(0.02, 0.98);
                    let mu1 = if x1 > 0.0 { (base + 0.4).clamp(0.02, 0.98) } else { mu0 };
                    total += pb * phi(x1) * phi(z) * h * h * mu0.max(mu1);
                }
            }
        }
        assert!((oracle.v_star - total).abs() < 4.0 * oracle.v_star_se + 1e-4, "{} vs {}", oracle.v_star, total);
        assert!(oracle.v_star_se < 0.001);
    }

    #[test]
    fn ill_posed_spec_rejected() {
        let spec = ScenarioSpec::new(10, Effect::Constant { delta: 0.9 }, 0);
        assert!(matches!(generate(&spec), Err(ItrError::IllPosed { .. })));
    }

    #[test]
    fn arm_sizes_are_balanced() {
        let mut inside = 0;
        for seed in 0..100 {
            let trial = draw_trial(&ScenarioSpec::new(1000, Effect::Null, seed)).unwrap();
            let n1 = trial.data.treatment.iter().filter(|&&a| a == 1).count() as f64;
            inside += ((n1 / 1000.0 - 0.5).abs() < 1.5 / 1000f64.sqrt()) as usize;
        }
        assert!(inside >= 95, "{inside}");
    }

    #[test]
    fn arm_means_match_expected_responses() {
        let spec = ScenarioSpec::threshold(20000, 8);
        let (trial, oracle) = generate(&spec).unwrap();
        for (arm, expected) in [(0u8, oracle.mean_mu0), (1, oracle.mean_mu1)] {
            let ys: Vec<f64> = (0..spec.n).filter(|&i| trial.data.treatment[i] == arm).map(|i| trial.data.outcome[i] as f64).collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            let se = (m * (1.0 - m) / ys.len() as f64).sqrt();
            assert!((m - expected).abs() < 3.0 * se, "arm {arm}: {m} vs {expected}");
        }
    }

    #[test]
    fn oracle_identity_and_flip() {
        let spec = ScenarioSpec::threshold(4000, 5);
        let (trial, oracle) = generate(&spec).unwrap();
        let exact = oracle_scores(Some(&trial.tau), &trial.optimal_decisions(), &trial, &oracle).unwrap();
        assert_eq!(exact.rmse, Some(0.0));
        assert_eq!(exact.accuracy, 1.0);
        let se = exact.value.as_ref().unwrap().se;
        assert!(exact.shortfall.unwrap().abs() < 2.0 * se + 3.0 * oracle.v_star_se);
        let flipped: Vec<f64> = trial.tau.iter().map(|t| -t).collect();
        let decisions: Vec<u8> = flipped.iter().map(|&t| (t > 0.0) as u8).collect();
        let report = oracle_scores(Some(&flipped), &decisions, &trial, &oracle).unwrap();
        let zero_region = trial.tau.iter().filter(|&&t| t == 0.0).count() as f64 / spec.n as f64;
        assert_eq!(report.accuracy, zero_region);
    }

    #[test]
    fn csv_round_trip() {
        let (trial, _) = generate(&ScenarioSpec::threshold(50, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.csv");
        trial.data.write_csv(&path, "A", "Y").unwrap();
        let schema = Schema {
            treatment: "A".into(),
            outcome: "Y".into(),
            center: Some("center".into()),
            continuous: (1..=5).map(|j| format!("x{j}")).collect(),
            categorical: vec!["b1".into(), "b2".into()],
        };
        let back = ingest_csv(&path, &schema).unwrap();
        assert_eq!(back.treatment, trial.data.treatment);
        assert_eq!(back.outcome, trial.data.outcome);
        assert_eq!(back.center, trial.data.center);
        for (a, b) in back.covariates.iter().zip(&trial.data.covariates) {
            assert_eq!(a.name, b.name);
            for i in 0..50 {
                assert_eq!(a.label(i), b.label(i));
            }
        }
    }
}
