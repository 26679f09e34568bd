//! Report files. CSVs use three decimals, `---` for undefined cells and
//! `ERROR` for methods that failed; they depend only on config and seed.

use std::path::{Path, PathBuf};

use itr_core::evaluation::{Estimate, Metric};
use serde_json::json;

use crate::error::{BenchError, Result};
use crate::pipeline::{MethodSuccess, RunReport};

pub const PERFORMANCE_FILE: &str = "performance.csv";
pub const MCC_FILE: &str = "agreement_mcc.csv";
pub const KAPPA_FILE: &str = "agreement_kappa.csv";
pub const MCA_FILE: &str = "mca_coordinates.csv";
pub const MANIFEST_FILE: &str = "run_manifest.json";

pub const UNDEFINED: &str = "---";
pub const FAILED: &str = "ERROR";

pub const PERFORMANCE_HEADER: [&str; 13] = [
    "method",
    "p_r",
    "value",
    "value_se",
    "b_pos",
    "b_pos_se",
    "b_neg",
    "b_neg_se",
    "pape",
    "pape_se",
    "c_for_benefit",
    "c_lower",
    "c_upper",
];

/// Three decimals, no negative zero.
pub fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn estimate_cells(m: &Metric<Estimate>) -> [String; 2] {
    match m {
        Ok(e) => [fmt3(e.estimate), fmt3(e.se)],
        Err(_) => [UNDEFINED.into(), UNDEFINED.into()],
    }
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// The twelve metric cells of a performance row, without the method id.
pub fn performance_cells(result: &std::result::Result<MethodSuccess, String>) -> Vec<String> {
    let Ok(s) = result else {
        return vec![FAILED.to_string(); PERFORMANCE_HEADER.len() - 1];
    };
    let p = &s.performance;
    let mut row = vec![fmt3(p.p_r)];
    for m in [&p.value, &p.b_pos, &p.b_neg, &p.pape] {
        row.extend(estimate_cells(m));
    }
    match &p.c_benefit {
        Ok(c) => row.extend([fmt3(c.estimate), fmt3(c.lower), fmt3(c.upper)]),
        Err(_) => row.extend([UNDEFINED.to_string(), UNDEFINED.into(), UNDEFINED.into()]),
    }
    row
}

pub fn performance_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PERFORMANCE_HEADER)?;
    for run in &report.methods {
        let mut row = vec![run.id().to_string()];
        row.extend(performance_cells(&run.result));
        w.write_record(&row)?;
    }
    finish(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    Mcc,
    Kappa,
}

/// Square matrix over every requested method; rows and columns of failed
/// methods hold `ERROR`.
pub fn agreement_csv(report: &RunReport, which: Agreement) -> Result<String> {
    let matrix = match which {
        Agreement::Mcc => &report.agreement.mcc,
        Agreement::Kappa => &report.agreement.kappa,
    };
    let position = |id: &str| report.agreement.methods.iter().position(|m| m == id);
    let ids: Vec<&str> = report.methods.iter().map(|r| r.id()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("method").chain(ids.iter().copied()))?;
    for a in &ids {
        let mut row = vec![a.to_string()];
        for b in &ids {
            row.push(match (position(a), position(b)) {
                (Some(i), Some(j)) => matrix[i][j].as_ref().map_or_else(|_| UNDEFINED.to_string(), |v| fmt3(*v)),
                _ => FAILED.to_string(),
            });
        }
        w.write_record(&row)?;
    }
    finish(w)
}

/// Category coordinates, one row per (method, decision level).
pub fn mca_csv(report: &RunReport, n_axes: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let dims: Vec<String> = (1..=n_axes).map(|k| format!("dim{k}")).collect();
    w.write_record(["method", "level"].into_iter().map(String::from).chain(dims))?;
    if let Ok(m) = &report.mca {
        for (r, (column, level)) in m.categories.iter().enumerate() {
            let mut row = vec![column.clone(), level.clone()];
            for k in 0..n_axes {
                row.push(if k < m.coordinates.ncols() { fmt3(m.coordinates[(r, k)]) } else { UNDEFINED.into() });
            }
            w.write_record(&row)?;
        }
    }
    finish(w)
}

pub fn manifest(report: &RunReport) -> serde_json::Value {
    let methods: Vec<_> = report
        .methods
        .iter()
        .map(|r| {
            let mut entry = json!({
                "id": r.id(),
                "family": r.method.family,
                "params": r.method.params,
                "seconds": (r.seconds * 1000.0).round() / 1000.0,
            });
            match &r.result {
                Ok(s) => {
                    entry["status"] = json!("ok");
                    entry["flags"] = json!(s.rule.flags);
                    entry["has_benefit_score"] = json!(s.rule.scores.is_some());
                }
                Err(e) => {
                    entry["status"] = json!("error");
                    entry["error"] = json!(e);
                }
            }
            entry
        })
        .collect();
    let failures: Vec<_> = report.failures().iter().map(|r| json!({"id": r.id(), "error": r.result.as_ref().err()})).collect();
    let mca = match &report.mca {
        Ok(m) => json!({
            "axes": m.inertia.len(),
            "inertia": m.inertia,
            "explained": (0..m.inertia.len()).map(|k| m.explained(k)).collect::<Vec<_>>(),
            "total_inertia": m.total_inertia,
            "dropped_columns": m.dropped_columns,
        }),
        Err(e) => json!({ "error": e }),
    };
    json!({
        "tool": "itr-bench",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": itr_core::VERSION,
        "config": report.config,
        "seed": report.config.seed,
        "split_seed": report.config.split.seed,
        "data": report.data,
        "methods": methods,
        "failures": failures,
        "mca": mca,
    })
}

/// Writes all five report files into `dir` (created if needed).
pub fn write_reports(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.to_path_buf(), source })?;
    let files = [
        (PERFORMANCE_FILE, performance_csv(report)?),
        (MCC_FILE, agreement_csv(report, Agreement::Mcc)?),
        (KAPPA_FILE, agreement_csv(report, Agreement::Kappa)?),
        (MCA_FILE, mca_csv(report, report.config.mca_axes)?),
        (MANIFEST_FILE, serde_json::to_string_pretty(&manifest(report))? + "\n"),
    ];
    let mut written = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|source| BenchError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}
