//! Pairwise agreement between treatment recommendations.

use serde::Serialize;

use super::{Metric, Undefined};
use crate::error::{ItrError, Result};

/// 2×2 table of two decision vectors: `[[both 0, r1=0 r2=1], [r1=1 r2=0, both 1]]`.
fn confusion(r1: &[u8], r2: &[u8]) -> Result<[[f64; 2]; 2]> {
    if r1.len() != r2.len() {
        return Err(ItrError::LengthMismatch { left: r1.len(), right: r2.len() });
    }
    let mut t = [[0.0; 2]; 2];
    for (&a, &b) in r1.iter().zip(r2) {
        if a > 1 || b > 1 {
            return Err(ItrError::Config("decisions must be 0/1".into()));
        }
        t[a as usize][b as usize] += 1.0;
    }
    Ok(t)
}

fn constant(t: &[[f64; 2]; 2]) -> Option<Undefined> {
    let r1_treated = t[1][0] + t[1][1];
    let r2_treated = t[0][1] + t[1][1];
    let n = r1_treated + t[0][0] + t[0][1];
    if r1_treated == 0.0 || r1_treated == n {
        return Some(Undefined("first rule is constant".into()));
    }
    if r2_treated == 0.0 || r2_treated == n {
        return Some(Undefined("second rule is constant".into()));
    }
    None
}

/// Matthews correlation coefficient; undefined when either rule is constant.
pub fn mcc(r1: &[u8], r2: &[u8]) -> Result<Metric<f64>> {
    let t = confusion(r1, r2)?;
    if let Some(u) = constant(&t) {
        return Ok(Err(u));
    }
    let (tn, fp, fn_, tp) = (t[0][0], t[0][1], t[1][0], t[1][1]);
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    Ok(Ok((tp * tn - fp * fn_) / denom))
}

/// Cohen's kappa; undefined when either rule is constant.
pub fn kappa(r1: &[u8], r2: &[u8]) -> Result<Metric<f64>> {
    let t = confusion(r1, r2)?;
    if let Some(u) = constant(&t) {
        return Ok(Err(u));
    }
    let n = t.iter().flatten().sum::<f64>();
    let observed = (t[0][0] + t[1][1]) / n;
    let expected = ((t[1][0] + t[1][1]) * (t[0][1] + t[1][1]) + (t[0][0] + t[0][1]) * (t[0][0] + t[1][0])) / (n * n);
    Ok(Ok((observed - expected) / (1.0 - expected)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementMatrix {
    pub methods: Vec<String>,
    pub mcc: Vec<Vec<Metric<f64>>>,
    pub kappa: Vec<Vec<Metric<f64>>>,
}

impl AgreementMatrix {
    pub fn compute(methods: &[String], decisions: &[Vec<u8>]) -> Result<AgreementMatrix> {
        if methods.len() != decisions.len() {
            return Err(ItrError::LengthMismatch { left: methods.len(), right: decisions.len() });
        }
        let k = methods.len();
        let mut mcc_m = vec![vec![Ok(0.0); k]; k];
        let mut kappa_m = vec![vec![Ok(0.0); k]; k];
        for i in 0..k {
            for j in i..k {
                let m = mcc(&decisions[i], &decisions[j])?;
                let kp = kappa(&decisions[i], &decisions[j])?;
                mcc_m[i][j] = m.clone();
                mcc_m[j][i] = m;
                kappa_m[i][j] = kp.clone();
                kappa_m[j][i] = kp;
            }
        }
        Ok(AgreementMatrix { methods: methods.to_vec(), mcc: mcc_m, kappa: kappa_m })
    }

    /// Mean of the defined off-diagonal kappas between the two groups (by index).
    pub fn mean_kappa(&self, group_a: &[usize], group_b: &[usize]) -> Option<f64> {
        let values: Vec<f64> = group_a
            .iter()
            .flat_map(|&i| group_b.iter().map(move |&j| (i, j)))
            .filter(|(i, j)| i != j)
            .filter_map(|(i, j)| self.kappa[i][j].as_ref().ok().copied())
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}
