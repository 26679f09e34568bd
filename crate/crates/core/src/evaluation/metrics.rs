//! Single-rule performance: value, benefit in each recommended group, PAPE.

use super::{check_lengths, Estimate, Metric, Undefined};
use crate::error::Result;

/// Counts and outcome sums in the four (arm, decision) cells.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Cells {
    /// `n[a][r]`
    pub n: [[usize; 2]; 2],
    /// `events[a][r]`: number of `Y = 1`
    pub events: [[usize; 2]; 2],
}

impl Cells {
    pub fn tally(decisions: &[u8], treatment: &[u8], outcome: &[u8]) -> Cells {
        let mut cells = Cells::default();
        for ((&r, &a), &y) in decisions.iter().zip(treatment).zip(outcome) {
            let (a, r) = ((a == 1) as usize, (r == 1) as usize);
            cells.n[a][r] += 1;
            cells.events[a][r] += (y == 1) as usize;
        }
        cells
    }

    pub fn mean(&self, a: usize, r: usize) -> Option<f64> {
        (self.n[a][r] > 0).then(|| self.events[a][r] as f64 / self.n[a][r] as f64)
    }

    fn arm(&self, a: usize) -> (usize, usize) {
        (self.n[a][0] + self.n[a][1], self.events[a][0] + self.events[a][1])
    }

    fn total(&self) -> usize {
        self.n.iter().flatten().sum()
    }
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn treated_proportion(decisions: &[u8]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions.iter().filter(|&&r| r == 1).count() as f64 / decisions.len() as f64
}

/// Mean outcome over patients whose received arm matches the recommendation,
/// with a binomial standard error.
pub fn value(decisions: &[u8], treatment: &[u8], outcome: &[u8]) -> Result<Metric<Estimate>> {
    check_lengths(decisions, treatment, outcome)?;
    let c = Cells::tally(decisions, treatment, outcome);
    let n = c.n[1][1] + c.n[0][0];
    if n == 0 {
        return Ok(Err(Undefined("no patient received the recommended arm".into())));
    }
    let v = (c.events[1][1] + c.events[0][0]) as f64 / n as f64;
    Ok(Ok(Estimate { estimate: v, se: binomial_se(v, n) }))
}

fn difference(c: &Cells, plus: (usize, usize), minus: (usize, usize), side: &str) -> Metric<Estimate> {
    match (c.mean(plus.0, plus.1), c.mean(minus.0, minus.1)) {
        (Some(p1), Some(p0)) => Ok(Estimate {
            estimate: p1 - p0,
            se: (p1 * (1.0 - p1) / c.n[plus.0][plus.1] as f64 + p0 * (1.0 - p0) / c.n[minus.0][minus.1] as f64).sqrt(),
        }),
        (None, _) => Err(Undefined(format!(
            "{side}: no {} patient with r = {}",
            if plus.0 == 1 { "treated" } else { "control" },
            plus.1
        ))),
        (_, None) => Err(Undefined(format!(
            "{side}: no {} patient with r = {}",
            if minus.0 == 1 { "treated" } else { "control" },
            minus.1
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenefitByGroup {
    pub b_pos: Metric<Estimate>,
    pub b_neg: Metric<Estimate>,
}

/// `B_pos = P(Y|A=1,r=1) − P(Y|A=0,r=1)`, `B_neg = P(Y|A=0,r=0) − P(Y|A=1,r=0)`.
pub fn b_pos_neg(decisions: &[u8], treatment: &[u8], outcome: &[u8]) -> Result<BenefitByGroup> {
    check_lengths(decisions, treatment, outcome)?;
    let c = Cells::tally(decisions, treatment, outcome);
    Ok(BenefitByGroup { b_pos: difference(&c, (1, 1), (0, 1), "B_pos"), b_neg: difference(&c, (0, 0), (1, 0), "B_neg") })
}

/// `V̂(r) − [p̂ ȳ₁ + (1 − p̂) ȳ₀]`.
///
/// Every term is a linear combination of the four (arm, decision) cell means, so the
/// estimate is written as `Σ c_ar m_ar` and its SE is the delta-method
/// `√Σ c_ar² m_ar(1 − m_ar)/n_ar` with `p̂` held fixed. Constant rules make every
/// coefficient exactly zero.
pub fn pape(decisions: &[u8], treatment: &[u8], outcome: &[u8]) -> Result<Metric<Estimate>> {
    check_lengths(decisions, treatment, outcome)?;
    let c = Cells::tally(decisions, treatment, outcome);
    let (n1, _) = c.arm(1);
    let (n0, _) = c.arm(0);
    if n1 == 0 || n0 == 0 {
        return Ok(Err(Undefined("PAPE needs both arms".into())));
    }
    let concordant = c.n[1][1] + c.n[0][0];
    if concordant == 0 {
        return Ok(Err(Undefined("value undefined: no patient received the recommended arm".into())));
    }
    let p = (c.n[1][1] + c.n[0][1]) as f64 / c.total() as f64;
    let mut coef = [[0.0; 2]; 2];
    coef[1][1] = c.n[1][1] as f64 / concordant as f64 - p * c.n[1][1] as f64 / n1 as f64;
    coef[0][0] = c.n[0][0] as f64 / concordant as f64 - (1.0 - p) * c.n[0][0] as f64 / n0 as f64;
    coef[1][0] = -p * c.n[1][0] as f64 / n1 as f64;
    coef[0][1] = -(1.0 - p) * c.n[0][1] as f64 / n0 as f64;
    let mut estimate = 0.0;
    let mut var = 0.0;
    for a in 0..2 {
        for r in 0..2 {
            if let Some(m) = c.mean(a, r) {
                estimate += coef[a][r] * m;
                var += coef[a][r] * coef[a][r] * m * (1.0 - m) / c.n[a][r] as f64;
            }
        }
    }
    Ok(Ok(Estimate { estimate, se: var.sqrt() }))
}
