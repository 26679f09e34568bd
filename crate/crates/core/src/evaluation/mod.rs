//! Rule performance metrics, agreement statistics and correspondence analysis.
//!
//! Metrics that cannot be computed on a given sample (an empty cell, a constant
//! rule) are returned as `Err(Undefined)` rather than as NaN.

pub mod agreement;
pub mod cfb;
pub mod mca;
pub mod metrics;

use serde::Serialize;
use thiserror::Error;

pub use agreement::{kappa, mcc, AgreementMatrix};
pub use cfb::{c_for_benefit, concordance, match_pairs, CForBenefitConfig, MatchedPairs, Matching};
pub use mca::{bin_cuts, bin_quantiles, mca, CategoricalColumn, McaResult};
pub use metrics::{b_pos_neg, pape, treated_proportion, value, BenefitByGroup};

use crate::error::{ItrError, Result};

/// Why a metric has no value on this sample.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("undefined: {0}")]
pub struct Undefined(pub String);

pub type Metric<T> = std::result::Result<T, Undefined>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

pub(crate) fn check_lengths(decisions: &[u8], treatment: &[u8], outcome: &[u8]) -> Result<()> {
    if decisions.len() != treatment.len() {
        return Err(ItrError::LengthMismatch { left: decisions.len(), right: treatment.len() });
    }
    if outcome.len() != treatment.len() {
        return Err(ItrError::LengthMismatch { left: treatment.len(), right: outcome.len() });
    }
    Ok(())
}

/// One row of the performance table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RulePerformance {
    pub p_r: f64,
    pub value: Metric<Estimate>,
    pub b_pos: Metric<Estimate>,
    pub b_neg: Metric<Estimate>,
    pub pape: Metric<Estimate>,
    pub c_benefit: Metric<Interval>,
}

/// Evaluates a rule's decisions on held-out data. `scores` is the rule's benefit
/// score; rules without one get an undefined c-for-benefit.
pub fn evaluate_rule(
    decisions: &[u8],
    scores: Option<&[f64]>,
    treatment: &[u8],
    outcome: &[u8],
    cfb: &CForBenefitConfig,
) -> Result<RulePerformance> {
    let benefit = b_pos_neg(decisions, treatment, outcome)?;
    let c_benefit = match scores {
        Some(s) => c_for_benefit(s, treatment, outcome, cfb)?,
        None => Err(Undefined("rule has no benefit score".into())),
    };
    Ok(RulePerformance {
        p_r: treated_proportion(decisions),
        value: value(decisions, treatment, outcome)?,
        b_pos: benefit.b_pos,
        b_neg: benefit.b_neg,
        pape: pape(decisions, treatment, outcome)?,
        c_benefit,
    })
}
