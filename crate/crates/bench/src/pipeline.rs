//! Split, encode, fit every method concurrently, evaluate on the held-out part.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use itr_core::dataset::{split_by_center, EncodedTrial, Encoder};
use itr_core::evaluation::{evaluate_rule, mca, AgreementMatrix, CForBenefitConfig, CategoricalColumn, McaResult, RulePerformance};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{ResolvedMethod, RunConfig};
use crate::error::Result;
use crate::registry::FittedRule;

#[derive(Debug, Clone)]
pub struct MethodSuccess {
    pub rule: FittedRule,
    pub performance: RulePerformance,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: ResolvedMethod,
    /// Failure message when fitting or evaluation failed (panics included).
    pub result: std::result::Result<MethodSuccess, String>,
    pub seconds: f64,
}

impl MethodRun {
    pub fn id(&self) -> &'static str {
        self.method.id
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DataSummary {
    pub n_rows: usize,
    pub dropped_rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_train_treated: usize,
    pub n_test_treated: usize,
    pub design_columns: Vec<String>,
    /// Test cells whose categorical level never occurred in training.
    pub unknown_levels: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub data: DataSummary,
    pub methods: Vec<MethodRun>,
    /// Agreement between the methods that succeeded, in report order.
    pub agreement: AgreementMatrix,
    pub mca: std::result::Result<McaResult, String>,
}

impl RunReport {
    pub fn failures(&self) -> Vec<&MethodRun> {
        self.methods.iter().filter(|m| m.result.is_err()).collect()
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

fn fit_one(method: &ResolvedMethod, train: &EncodedTrial, test: &EncodedTrial, cfb: &CForBenefitConfig) -> MethodRun {
    let start = Instant::now();
    info!("fitting {}", method.id);
    let attempt = catch_unwind(AssertUnwindSafe(|| -> itr_core::Result<MethodSuccess> {
        let rule = method.params.fit_predict(train, &test.x)?;
        let performance =
            evaluate_rule(&rule.decisions, rule.scores.as_deref(), &test.treatment, &test.outcome, cfb)?;
        Ok(MethodSuccess { rule, performance })
    }));
    let result = match attempt {
        Ok(Ok(success)) => Ok(success),
        Ok(Err(e)) => Err(e.to_string()),
        Err(payload) => Err(format!("panicked: {}", panic_message(payload))),
    };
    let seconds = start.elapsed().as_secs_f64();
    match &result {
        Ok(_) => info!("{} done in {seconds:.1}s", method.id),
        Err(e) => warn!("{} failed: {e}", method.id),
    }
    MethodRun { method: method.clone(), result, seconds }
}

/// Fits every method on `train` and evaluates it on `test`; failures are
/// isolated per method. Output order follows `methods`.
pub fn fit_methods(
    methods: &[ResolvedMethod],
    train: &EncodedTrial,
    test: &EncodedTrial,
    cfb: &CForBenefitConfig,
) -> Vec<MethodRun> {
    methods.par_iter().map(|m| fit_one(m, train, test, cfb)).collect()
}

/// Pairwise agreement and MCA over the decisions of the successful runs.
pub fn compare(runs: &[MethodRun], mca_axes: usize) -> Result<(AgreementMatrix, std::result::Result<McaResult, String>)> {
    let ok: Vec<(&str, &[u8])> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|s| (r.id(), s.rule.decisions.as_slice())))
        .collect();
    let names: Vec<String> = ok.iter().map(|(id, _)| id.to_string()).collect();
    let decisions: Vec<Vec<u8>> = ok.iter().map(|(_, d)| d.to_vec()).collect();
    let agreement = AgreementMatrix::compute(&names, &decisions)?;
    let columns: Vec<CategoricalColumn> = ok
        .iter()
        .map(|(id, d)| {
            CategoricalColumn::new(*id, d.iter().map(|&v| if v == 1 { "treat" } else { "control" }.to_string()).collect())
        })
        .collect();
    let mca = mca(&columns, mca_axes, false).map_err(|e| e.to_string());
    Ok((agreement, mca))
}

pub fn run(config: &RunConfig) -> Result<RunReport> {
    let methods = config.resolve_methods()?;
    let data = config.load_data()?;
    let (train_raw, test_raw) = split_by_center(&data, &config.split)?;
    let encoder = Encoder::fit(&train_raw, config.standardize);
    let train_design = encoder.transform(&train_raw)?;
    let test_design = encoder.transform(&test_raw)?;
    let train = EncodedTrial::from_design(&train_design, &train_raw)?;
    let test = EncodedTrial::from_design(&test_design, &test_raw)?;
    train.require_both_arms()?;
    info!("train n = {}, test n = {}, {} methods", train.n(), test.n(), methods.len());

    let summary = DataSummary {
        n_rows: data.n_patients(),
        dropped_rows: data.dropped_rows,
        n_train: train.n(),
        n_test: test.n(),
        n_train_treated: train.n_treated(),
        n_test_treated: test.n_treated(),
        design_columns: train_design.column_names.clone(),
        unknown_levels: test_design.unknown_levels,
    };
    let runs = fit_methods(&methods, &train, &test, &config.c_for_benefit);
    let (agreement, mca) = compare(&runs, config.mca_axes)?;
    Ok(RunReport { config: config.clone(), data: summary, methods: runs, agreement, mca })
}
