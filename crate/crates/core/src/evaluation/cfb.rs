//! Concordance statistic for benefit over matched treated/control pairs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Interval, Metric, Undefined};
use crate::error::{ItrError, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// i-th lowest treated score with the i-th lowest control score.
    #[default]
    Sorted,
    /// Each patient of the smaller arm, in score order, takes the closest unused
    /// patient of the larger arm.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CForBenefitConfig {
    pub matching: Matching,
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl Default for CForBenefitConfig {
    fn default() -> Self {
        CForBenefitConfig { matching: Matching::Sorted, n_bootstrap: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPairs {
    /// `(treated row, control row)`
    pub rows: Vec<(usize, usize)>,
    /// Mean of the two scores.
    pub predicted: Vec<f64>,
    /// `Y_treated − Y_control`
    pub observed: Vec<i8>,
}

fn sorted_arm(scores: &[f64], treatment: &[u8], arm: u8) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| treatment[i] == arm).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
    idx
}

pub fn match_pairs(scores: &[f64], treatment: &[u8], outcome: &[u8], matching: Matching) -> MatchedPairs {
    let treated = sorted_arm(scores, treatment, 1);
    let control = sorted_arm(scores, treatment, 0);
    let rows: Vec<(usize, usize)> = match matching {
        Matching::Sorted => treated.iter().copied().zip(control.iter().copied()).collect(),
        Matching::Nearest => {
            let treated_smaller = treated.len() <= control.len();
            let (small, large) = if treated_smaller { (&treated, &control) } else { (&control, &treated) };
            let mut used = vec![false; large.len()];
            let mut rows = Vec::with_capacity(small.len());
            for &i in small {
                let best = (0..large.len())
                    .filter(|&k| !used[k])
                    .min_by(|&a, &b| (scores[large[a]] - scores[i]).abs().total_cmp(&(scores[large[b]] - scores[i]).abs()));
                if let Some(k) = best {
                    used[k] = true;
                    rows.push(if treated_smaller { (i, large[k]) } else { (large[k], i) });
                }
            }
            rows
        }
    };
    let predicted = rows.iter().map(|&(t, c)| 0.5 * (scores[t] + scores[c])).collect();
    let observed = rows.iter().map(|&(t, c)| outcome[t] as i8 - outcome[c] as i8).collect();
    MatchedPairs { rows, predicted, observed }
}

/// Concordance over all pair-pairs with unequal observed benefit, ties in
/// predicted benefit counted 1/2. Runs in `O(m log m)`.
pub fn concordance(predicted: &[f64], observed: &[i8]) -> Metric<f64> {
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&i, &j| predicted[i].total_cmp(&predicted[j]));
    // counts of already-seen (strictly lower prediction) pairs per benefit class −1, 0, 1
    let mut below = [0u64; 3];
    let (mut concordant, mut discordant, mut tied) = (0u64, 0u64, 0u64);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && predicted[order[end]] == predicted[order[start]] {
            end += 1;
        }
        let mut group = [0u64; 3];
        for &i in &order[start..end] {
            let b = (observed[i] + 1) as usize;
            concordant += below[..b].iter().sum::<u64>();
            discordant += below[b + 1..].iter().sum::<u64>();
            group[b] += 1;
        }
        tied += group[0] * group[1] + group[0] * group[2] + group[1] * group[2];
        for k in 0..3 {
            below[k] += group[k];
        }
        start = end;
    }
    let informative = concordant + discordant + tied;
    if informative == 0 {
        return Err(Undefined("no matched pairs with unequal observed benefit".into()));
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / informative as f64)
}

/// Point estimate with a percentile bootstrap interval over matched pairs.
pub fn c_for_benefit(scores: &[f64], treatment: &[u8], outcome: &[u8], config: &CForBenefitConfig) -> Result<Metric<Interval>> {
    if scores.len() != treatment.len() || scores.len() != outcome.len() {
        return Err(ItrError::LengthMismatch { left: scores.len(), right: treatment.len().min(outcome.len()) });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ItrError::Config("benefit scores must be finite".into()));
    }
    let pairs = match_pairs(scores, treatment, outcome, config.matching);
    if pairs.rows.is_empty() {
        return Ok(Err(Undefined("c-for-benefit needs both arms".into())));
    }
    let estimate = match concordance(&pairs.predicted, &pairs.observed) {
        Ok(c) => c,
        Err(u) => return Ok(Err(u)),
    };
    let m = pairs.rows.len();
    let mut rng = stream_rng(config.seed, 0xCB);
    let mut boot = Vec::with_capacity(config.n_bootstrap);
    let mut predicted = vec![0.0; m];
    let mut observed = vec![0i8; m];
    for _ in 0..config.n_bootstrap {
        for k in 0..m {
            let j = rng.random_range(0..m);
            predicted[k] = pairs.predicted[j];
            observed[k] = pairs.observed[j];
        }
        if let Ok(c) = concordance(&predicted, &observed) {
            boot.push(c);
        }
    }
    let (lower, upper) = if boot.is_empty() {
        (estimate, estimate)
    } else {
        boot.sort_by(f64::total_cmp);
        (quantile(&boot, 0.025), quantile(&boot, 0.975))
    };
    Ok(Ok(Interval { estimate, lower, upper }))
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
