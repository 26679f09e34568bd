//! The benchmarked methods, their default hyperparameters and a uniform
//! fit-then-decide entry point.

use itr_core::causal_forest::{fit_causal_forest, CausalForestConfig};
use itr_core::dataset::EncodedTrial;
use itr_core::direct_rules::{
    fit_benefit_score, fit_hinge_rule, BenefitConfig, BenefitMethod, HingeMethod, HingeRuleConfig,
};
use itr_core::metalearners::crossfit::{crossfit_predict, CrossfitConfig};
use itr_core::metalearners::{fit_meta_learner, BaseLearner, MetaLearnerKind, MetaOptions};
use itr_core::rng::derive_seed;
use itr_core::rule::{ThresholdRule, TreatmentRule};
use itr_core::virtual_twins::{fit_virtual_twins, VirtualTwinsConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ParametricMeta,
    ForestMeta,
    CrossfitMeta,
    CausalForest,
    VirtualTwins,
    BenefitScore,
    Hinge,
}

impl Family {
    /// Methods that produce an effect estimate and treat when it is positive.
    pub fn is_ite(self) -> bool {
        !matches!(self, Family::BenefitScore | Family::Hinge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodSpec {
    pub id: &'static str,
    pub family: Family,
}

const fn spec(id: &'static str, family: Family) -> MethodSpec {
    MethodSpec { id, family }
}

/// Every method in table order. A method's position fixes its seed stream, so
/// selecting a subset does not change its results.
pub const METHODS: [MethodSpec; 21] = [
    spec("SL", Family::ParametricMeta),
    spec("TL", Family::ParametricMeta),
    spec("XL", Family::ParametricMeta),
    spec("DRL", Family::ParametricMeta),
    spec("RL", Family::ParametricMeta),
    spec("SL-RF", Family::ForestMeta),
    spec("TL-RF", Family::ForestMeta),
    spec("XL-RF", Family::ForestMeta),
    spec("DRL-RF", Family::ForestMeta),
    spec("RL-RF", Family::ForestMeta),
    spec("SL-CF", Family::CrossfitMeta),
    spec("TL-CF", Family::CrossfitMeta),
    spec("XL-CF", Family::CrossfitMeta),
    spec("DRL-CF", Family::CrossfitMeta),
    spec("RL-CF", Family::CrossfitMeta),
    spec("CausalForest", Family::CausalForest),
    spec("VT", Family::VirtualTwins),
    spec("AL", Family::BenefitScore),
    spec("MCM", Family::BenefitScore),
    spec("OWL", Family::Hinge),
    spec("CWL", Family::Hinge),
];

pub fn lookup(id: &str) -> Option<(usize, MethodSpec)> {
    METHODS.iter().enumerate().find(|(_, m)| m.id == id).map(|(i, m)| (i, *m))
}

pub fn all_ids() -> Vec<&'static str> {
    METHODS.iter().map(|m| m.id).collect()
}

fn meta_kind(id: &str) -> MetaLearnerKind {
    let prefix = id.split('-').next().unwrap_or(id);
    MetaLearnerKind::ALL.into_iter().find(|k| k.id() == prefix).expect("meta-learner id")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodParams {
    Meta { learner: MetaLearnerKind, base: BaseLearner, options: MetaOptions },
    Crossfit { learner: MetaLearnerKind, base: BaseLearner, options: MetaOptions, crossfit: CrossfitConfig },
    CausalForest { config: CausalForestConfig },
    VirtualTwins { config: VirtualTwinsConfig },
    Benefit { method: BenefitMethod, config: BenefitConfig },
    Hinge { method: HingeMethod, config: HingeRuleConfig },
}

/// Seed used by the method at `index` for global seed `seed`.
pub fn method_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

impl MethodParams {
    /// Default hyperparameters for `id`, seeded from the global seed.
    pub fn defaults(id: &str, seed: u64) -> Result<Self> {
        let (index, spec) = lookup(id).ok_or_else(|| BenchError::UnknownMethod(id.to_string()))?;
        let seed = method_seed(seed, index);
        Ok(match spec.family {
            Family::ParametricMeta => MethodParams::Meta {
                learner: meta_kind(id),
                base: BaseLearner::parametric(),
                options: MetaOptions { seed, ..MetaOptions::default() },
            },
            Family::ForestMeta => MethodParams::Meta {
                learner: meta_kind(id),
                base: BaseLearner::forest(),
                options: MetaOptions { seed, ..MetaOptions::default() },
            },
            Family::CrossfitMeta => MethodParams::Crossfit {
                learner: meta_kind(id),
                base: BaseLearner::forest(),
                options: MetaOptions { seed, ..MetaOptions::default() },
                crossfit: CrossfitConfig { seed, ..CrossfitConfig::default() },
            },
            Family::CausalForest => {
                MethodParams::CausalForest { config: CausalForestConfig { seed, ..CausalForestConfig::default() } }
            }
            Family::VirtualTwins => {
                MethodParams::VirtualTwins { config: VirtualTwinsConfig { seed, ..VirtualTwinsConfig::default() } }
            }
            Family::BenefitScore => MethodParams::Benefit {
                method: if id == "AL" { BenefitMethod::ALearning } else { BenefitMethod::ModifiedCovariate },
                config: BenefitConfig::default(),
            },
            Family::Hinge => MethodParams::Hinge {
                method: if id == "OWL" { HingeMethod::OutcomeWeighted } else { HingeMethod::ContrastWeighted },
                config: HingeRuleConfig { seed, ..HingeRuleConfig::default() },
            },
        })
    }

    /// Defaults for `id` with `patch` merged in key by key. The patch may tune
    /// hyperparameters but not turn the method into a different one.
    pub fn with_override(id: &str, seed: u64, patch: &Value) -> Result<Self> {
        let defaults = Self::defaults(id, seed)?;
        if !patch.is_object() {
            return Err(BenchError::Override { method: id.into(), reason: "expected a JSON object".into() });
        }
        let mut merged = serde_json::to_value(&defaults)?;
        merge(&mut merged, patch);
        let params: MethodParams = serde_json::from_value(merged)
            .map_err(|e| BenchError::Override { method: id.into(), reason: e.to_string() })?;
        if params.identity() != defaults.identity() {
            return Err(BenchError::Override {
                method: id.into(),
                reason: "overrides may not change the learner, base family or method".into(),
            });
        }
        params.validate().map_err(|e| BenchError::Override { method: id.into(), reason: e.to_string() })?;
        Ok(params)
    }

    fn identity(&self) -> String {
        match self {
            MethodParams::Meta { learner, base, .. } => format!("meta/{}/{}", learner.id(), base_family(base)),
            MethodParams::Crossfit { learner, base, .. } => format!("crossfit/{}/{}", learner.id(), base_family(base)),
            MethodParams::CausalForest { .. } => "causal_forest".into(),
            MethodParams::VirtualTwins { .. } => "virtual_twins".into(),
            MethodParams::Benefit { method, .. } => format!("benefit/{method:?}"),
            MethodParams::Hinge { method, .. } => format!("hinge/{method:?}"),
        }
    }

    pub fn validate(&self) -> itr_core::Result<()> {
        match self {
            MethodParams::Crossfit { crossfit, .. } => crossfit.validate(),
            MethodParams::Hinge { config, .. } => config.validate(),
            _ => Ok(()),
        }
    }

    /// Fits on `train` and applies the rule to `test_x` (same encoding).
    pub fn fit_predict(&self, train: &EncodedTrial, test_x: &DMatrix<f64>) -> itr_core::Result<FittedRule> {
        let mut notes = Vec::new();
        let (decisions, scores, converged) = match self {
            MethodParams::Meta { learner, base, options } => {
                let model = fit_meta_learner(*learner, train, base, options)?;
                let converged = model.converged();
                let rule = ThresholdRule::new(model);
                (rule.decide(test_x), rule.benefit_score(test_x), converged)
            }
            MethodParams::Crossfit { learner, base, options, crossfit } => {
                let out = crossfit_predict(*learner, train, test_x, base, options, crossfit)?;
                let decisions = out.test_tau.iter().map(|&t| (t > 0.0) as u8).collect();
                (decisions, Some(out.test_tau), out.converged)
            }
            MethodParams::CausalForest { config } => {
                let rule = ThresholdRule::new(fit_causal_forest(train, config)?);
                (rule.decide(test_x), rule.benefit_score(test_x), true)
            }
            MethodParams::VirtualTwins { config } => {
                let model = fit_virtual_twins(train, config)?;
                if model.constant_labels {
                    notes.push("all step-2 labels equal".to_string());
                }
                (model.decide(test_x), None, true)
            }
            MethodParams::Benefit { method, config } => {
                let model = fit_benefit_score(train, *method, config)?;
                if !model.converged {
                    notes.push(format!("stopped after {} iterations", model.iterations));
                }
                (model.decide(test_x), model.benefit_score(test_x), model.converged)
            }
            MethodParams::Hinge { method, config } => {
                let model = fit_hinge_rule(train, *method, config)?;
                notes.push(format!("lambda = {}", model.lambda));
                if model.degenerate {
                    notes.push("no patient carries weight".to_string());
                }
                (model.decide(test_x), None, true)
            }
        };
        let constant_rule = decisions.windows(2).all(|w| w[0] == w[1]);
        Ok(FittedRule { decisions, scores, flags: FitFlags { converged, constant_rule, notes } })
    }
}

fn base_family(base: &BaseLearner) -> &'static str {
    match base {
        BaseLearner::Parametric { .. } => "parametric",
        BaseLearner::Forest { .. } => "forest",
        BaseLearner::Mean => "mean",
    }
}

/// Recursive merge: objects merge key by key, anything else replaces.
fn merge(target: &mut Value, patch: &Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                merge(t.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (t, p) => *t = p.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitFlags {
    pub converged: bool,
    /// Same decision for every test patient.
    pub constant_rule: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedRule {
    pub decisions: Vec<u8>,
    /// Benefit scores for the c-for-benefit; `None` for region-only rules.
    pub scores: Option<Vec<f64>>,
    pub flags: FitFlags,
}
