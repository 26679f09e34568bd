//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. The trial-data criterion runs only when
//! `ITR_IST_CONFIG` points at a run config for the extract.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use itr_bench::config::ResolvedMethod;
use itr_bench::pipeline::{compare, fit_methods, MethodRun};
use itr_bench::registry::{lookup, Family, MethodParams, METHODS};
use itr_bench::report::{performance_cells, PERFORMANCE_HEADER, UNDEFINED};
use itr_bench::{run, RunConfig};
use itr_core::causal_forest::{fit_causal_forest, CausalForestConfig};
use itr_core::dataset::{EncodedTrial, Encoder};
use itr_core::direct_rules::{modified_problem, BenefitMethod};
use itr_core::evaluation::{
    b_pos_neg, c_for_benefit, evaluate_rule, kappa, mcc, pape, value, AgreementMatrix, CForBenefitConfig,
};
use itr_core::learners::logistic::LogisticObjective;
use itr_core::metalearners::RLoss;
use itr_core::rng::{derive_seed, stream_rng};
use itr_core::synthetic::{generate, oracle_scores, Effect, Oracle, OracleReport, ScenarioSpec, SyntheticTrial};
use nalgebra::DVector;
use rand::Rng;
use serde_json::json;

const SEEDS: u64 = 10;
const N_TRAIN: usize = 4000;
const N_TEST: usize = 2000;

enum Status {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { status: if pass { Status::Pass } else { Status::Fail }, detail: detail.into() }
    }
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles, written from the definitions.

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn outcomes_where(r: &[u8], a: &[u8], y: &[u8], arm: u8, dec: u8) -> Vec<f64> {
    (0..y.len()).filter(|&i| a[i] == arm && r[i] == dec).map(|i| y[i] as f64).collect()
}

fn brute_value(r: &[u8], a: &[u8], y: &[u8]) -> Option<(f64, f64)> {
    let concordant: Vec<f64> = (0..y.len()).filter(|&i| a[i] == r[i]).map(|i| y[i] as f64).collect();
    let v = mean(&concordant)?;
    Some((v, (v * (1.0 - v) / concordant.len() as f64).sqrt()))
}

fn brute_diff(plus: &[f64], minus: &[f64]) -> Option<(f64, f64)> {
    let (p, m) = (mean(plus)?, mean(minus)?);
    Some((p - m, (p * (1.0 - p) / plus.len() as f64 + m * (1.0 - m) / minus.len() as f64).sqrt()))
}

/// PAPE as a function of the four (arm, decision) cell means at fixed counts.
fn pape_from_cells(means: [[f64; 2]; 2], counts: [[usize; 2]; 2]) -> f64 {
    let n = |a: usize, d: usize| counts[a][d] as f64;
    let total = n(0, 0) + n(0, 1) + n(1, 0) + n(1, 1);
    let p_r = (n(0, 1) + n(1, 1)) / total;
    let v = (n(1, 1) * means[1][1] + n(0, 0) * means[0][0]) / (n(1, 1) + n(0, 0));
    let arm1 = (n(1, 1) * means[1][1] + n(1, 0) * means[1][0]) / (n(1, 1) + n(1, 0));
    let arm0 = (n(0, 1) * means[0][1] + n(0, 0) * means[0][0]) / (n(0, 1) + n(0, 0));
    v - (p_r * arm1 + (1.0 - p_r) * arm0)
}

fn brute_pape(r: &[u8], a: &[u8], y: &[u8]) -> Option<(f64, f64)> {
    let mut means = [[0.0; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    for arm in 0..2u8 {
        for dec in 0..2u8 {
            let cell = outcomes_where(r, a, y, arm, dec);
            counts[arm as usize][dec as usize] = cell.len();
            means[arm as usize][dec as usize] = mean(&cell).unwrap_or(0.0);
        }
    }
    let arm_n = |arm: usize| counts[arm][0] + counts[arm][1];
    if arm_n(0) == 0 || arm_n(1) == 0 || counts[1][1] + counts[0][0] == 0 {
        return None;
    }
    let est = pape_from_cells(means, counts);
    // The estimator is linear in the cell means, so a unit step recovers each coefficient.
    let mut var = 0.0;
    for arm in 0..2 {
        for dec in 0..2 {
            if counts[arm][dec] == 0 {
                continue;
            }
            let mut bumped = means;
            bumped[arm][dec] += 1.0;
            let coef = pape_from_cells(bumped, counts) - est;
            let m = means[arm][dec];
            var += coef * coef * m * (1.0 - m) / counts[arm][dec] as f64;
        }
    }
    Some((est, var.sqrt()))
}

fn confusion(r1: &[u8], r2: &[u8]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for (&x, &z) in r1.iter().zip(r2) {
        c[x as usize][z as usize] += 1.0;
    }
    c
}

fn is_constant(r: &[u8]) -> bool {
    r.iter().all(|&v| v == r[0])
}

fn brute_mcc(r1: &[u8], r2: &[u8]) -> Option<f64> {
    if is_constant(r1) || is_constant(r2) {
        return None;
    }
    let c = confusion(r1, r2);
    let (tp, tn, fp, fn_) = (c[1][1], c[0][0], c[0][1], c[1][0]);
    Some((tp * tn - fp * fn_) / ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt())
}

fn brute_kappa(r1: &[u8], r2: &[u8]) -> Option<f64> {
    if is_constant(r1) || is_constant(r2) {
        return None;
    }
    let c = confusion(r1, r2);
    let n = r1.len() as f64;
    let p_o = (c[0][0] + c[1][1]) / n;
    let (p1, q1) = ((c[1][0] + c[1][1]) / n, (c[0][1] + c[1][1]) / n);
    let p_e = p1 * q1 + (1.0 - p1) * (1.0 - q1);
    Some((p_o - p_e) / (1.0 - p_e))
}

fn brute_cfb(s: &[f64], a: &[u8], y: &[u8]) -> Option<f64> {
    let arm = |t: u8| {
        let mut v: Vec<(f64, u8)> = (0..s.len()).filter(|&i| a[i] == t).map(|i| (s[i], y[i])).collect();
        v.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        v
    };
    let (treated, control) = (arm(1), arm(0));
    let pairs: Vec<(f64, i32)> = treated
        .iter()
        .zip(&control)
        .map(|(t, c)| ((t.0 + c.0) / 2.0, t.1 as i32 - c.1 as i32))
        .collect();
    let (mut score, mut informative) = (0.0, 0usize);
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let (pi, bi) = pairs[i];
            let (pj, bj) = pairs[j];
            if bi == bj {
                continue;
            }
            informative += 1;
            if pi == pj {
                score += 0.5;
            } else if (pi > pj) == (bi > bj) {
                score += 1.0;
            }
        }
    }
    (informative > 0).then(|| score / informative as f64)
}

fn close(got: Result<(f64, f64), ()>, want: Option<(f64, f64)>, tol: f64) -> bool {
    match (got, want) {
        (Ok(g), Some(w)) => (g.0 - w.0).abs() <= tol && (g.1 - w.1).abs() <= tol,
        (Err(()), None) => true,
        _ => false,
    }
}

fn bits(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_bool(0.5) as u8).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = stream_rng(2024, 1);
    let mut mismatches = Vec::new();
    let cfg = CForBenefitConfig { n_bootstrap: 0, ..CForBenefitConfig::default() };
    for instance in 0..50 {
        let n = rng.random_range(4..=30);
        let (a, y, r1, r2) = (bits(&mut rng, n), bits(&mut rng, n), bits(&mut rng, n), bits(&mut rng, n));
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        let as_pair = |m: itr_core::evaluation::Metric<itr_core::evaluation::Estimate>| {
            m.map(|e| (e.estimate, e.se)).map_err(|_| ())
        };
        let v = as_pair(value(&r1, &a, &y).unwrap());
        if !close(v, brute_value(&r1, &a, &y), 1e-12) {
            mismatches.push(format!("value #{instance}"));
        }
        let b = b_pos_neg(&r1, &a, &y).unwrap();
        let bp = brute_diff(&outcomes_where(&r1, &a, &y, 1, 1), &outcomes_where(&r1, &a, &y, 0, 1));
        let bn = brute_diff(&outcomes_where(&r1, &a, &y, 0, 0), &outcomes_where(&r1, &a, &y, 1, 0));
        if !close(as_pair(b.b_pos), bp, 1e-12) || !close(as_pair(b.b_neg), bn, 1e-12) {
            mismatches.push(format!("B_pos/B_neg #{instance}"));
        }
        if !close(as_pair(pape(&r1, &a, &y).unwrap()), brute_pape(&r1, &a, &y), 1e-12) {
            mismatches.push(format!("PAPE #{instance}"));
        }
        let scalar = |m: itr_core::evaluation::Metric<f64>| m.map(|v| (v, 0.0)).map_err(|_| ());
        let with_zero = |v: Option<f64>| v.map(|v| (v, 0.0));
        if !close(scalar(mcc(&r1, &r2).unwrap()), with_zero(brute_mcc(&r1, &r2)), 1e-12) {
            mismatches.push(format!("MCC #{instance}"));
        }
        if !close(scalar(kappa(&r1, &r2).unwrap()), with_zero(brute_kappa(&r1, &r2)), 1e-12) {
            mismatches.push(format!("kappa #{instance}"));
        }
        let c = c_for_benefit(&s, &a, &y, &cfg).unwrap().map(|c| (c.estimate, 0.0)).map_err(|_| ());
        if !close(c, with_zero(brute_cfb(&s, &a, &y)), 1e-9) {
            mismatches.push(format!("c-for-benefit #{instance}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        mismatches.is_empty() && secs < 10.0,
        format!("50 instances, {} mismatches {:?}, {secs:.2}s", mismatches.len(), mismatches.iter().take(5).collect::<Vec<_>>()),
    )
}

// ---------------------------------------------------------------------------

fn encode_pair(train: &SyntheticTrial, test: &SyntheticTrial) -> (EncodedTrial, EncodedTrial) {
    let encoder = Encoder::fit(&train.data, true);
    let tr = encoder.transform(&train.data).unwrap();
    let te = encoder.transform(&test.data).unwrap();
    (EncodedTrial::from_design(&tr, &train.data).unwrap(), EncodedTrial::from_design(&te, &test.data).unwrap())
}

/// Hyperparameters used throughout the acceptance runs: the defaults with
/// smaller forests and fewer cross-fitting repetitions.
fn acceptance_methods(seed: u64, ids: &[&str]) -> Vec<ResolvedMethod> {
    ids.iter()
        .map(|id| {
            let (index, spec) = lookup(id).unwrap();
            let patch = match spec.family {
                Family::ForestMeta => json!({"base": {"classify": {"n_trees": 200}, "regress": {"n_trees": 200}}}),
                Family::CrossfitMeta => json!({
                    "base": {"classify": {"n_trees": 50}, "regress": {"n_trees": 50}},
                    "crossfit": {"n_splits": 2}
                }),
                Family::CausalForest => json!({"config": {"n_trees": 500}}),
                Family::VirtualTwins => json!({"config": {"forest": {"n_trees": 300}}}),
                _ => json!({}),
            };
            let params = MethodParams::with_override(id, seed, &patch).unwrap();
            ResolvedMethod { id: spec.id, family: spec.family, index, params }
        })
        .collect()
}

fn all_ids() -> Vec<&'static str> {
    METHODS.iter().map(|m| m.id).collect()
}

struct SeedRun {
    runs: Vec<MethodRun>,
    oracle: Vec<Option<OracleReport>>,
    /// Accuracy against `1{τ > 0}` on the `τ > 0` and `τ = 0` patients.
    regions: Vec<Option<(f64, f64)>>,
    agreement: AgreementMatrix,
}

fn region_accuracy(decisions: &[u8], tau: &[f64]) -> (f64, f64) {
    let acc = |pos: bool| {
        let idx: Vec<usize> = (0..tau.len()).filter(|&i| (tau[i] > 0.0) == pos).collect();
        idx.iter().filter(|&&i| decisions[i] == pos as u8).count() as f64 / idx.len().max(1) as f64
    };
    (acc(true), acc(false))
}

fn scenario_runs(effect: Effect) -> (Vec<SeedRun>, Duration) {
    let start = Instant::now();
    let cfb = CForBenefitConfig { n_bootstrap: 50, ..CForBenefitConfig::default() };
    let runs = (0..SEEDS)
        .map(|seed| {
            let train_spec = ScenarioSpec::new(N_TRAIN, effect.clone(), derive_seed(seed, 1));
            let (train, _) = generate(&train_spec).unwrap();
            let (test, oracle): (SyntheticTrial, Oracle) =
                generate(&train_spec.with_n(N_TEST).with_seed(derive_seed(seed, 2))).unwrap();
            let (tr, te) = encode_pair(&train, &test);
            let runs = fit_methods(&acceptance_methods(seed, &all_ids()), &tr, &te, &cfb);
            let oracle = runs
                .iter()
                .map(|r| {
                    r.result.as_ref().ok().map(|s| {
                        oracle_scores(s.rule.scores.as_deref(), &s.rule.decisions, &test, &oracle).unwrap()
                    })
                })
                .collect();
            let regions = runs
                .iter()
                .map(|r| r.result.as_ref().ok().map(|s| region_accuracy(&s.rule.decisions, &test.tau)))
                .collect();
            let (agreement, _) = compare(&runs, 2).unwrap();
            SeedRun { runs, oracle, regions, agreement }
        })
        .collect();
    (runs, start.elapsed())
}

fn threshold_runs() -> &'static (Vec<SeedRun>, Duration) {
    static RUNS: OnceLock<(Vec<SeedRun>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| scenario_runs(Effect::Threshold { delta: 0.4, feature: 0, cut: 0.0 }))
}

fn failures(runs: &[SeedRun]) -> Vec<String> {
    runs.iter()
        .flat_map(|s| s.runs.iter())
        .filter_map(|r| r.result.as_ref().err().map(|e| format!("{}: {e}", r.id())))
        .collect()
}

fn criterion_2() -> Outcome {
    let mut problems = Vec::new();
    let mut constant_seen = BTreeMap::new();
    let cfb = CForBenefitConfig::default();
    let undefined_columns = |cells: &[String]| -> Vec<&str> {
        cells.iter().zip(&PERFORMANCE_HEADER[1..]).filter(|(c, _)| c.as_str() == UNDEFINED).map(|(_, h)| *h).collect()
    };
    const C_COLS: [&str; 3] = ["c_for_benefit", "c_lower", "c_upper"];
    for (k, effect) in [
        Effect::Null,
        Effect::Constant { delta: 0.2 },
        Effect::Threshold { delta: 0.4, feature: 0, cut: 0.0 },
        Effect::Linear { intercept: 0.0, weights: vec![0.08, -0.08, 0.0, 0.0, 0.0, 0.05, 0.0] },
    ]
    .into_iter()
    .enumerate()
    {
        for seed in 0..3u64 {
            let (trial, _) = generate(&ScenarioSpec::new(1500, effect.clone(), 100 * k as u64 + seed)).unwrap();
            let (a, y) = (&trial.data.treatment, &trial.data.outcome);
            let n = a.len();
            let arm_mean = |t: u8| {
                let v: Vec<f64> = (0..n).filter(|&i| a[i] == t).map(|i| y[i] as f64).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            for (label, decision) in [("treat-all", 1u8), ("treat-none", 0u8)] {
                let r = vec![decision; n];
                let p = evaluate_rule(&r, None, a, y, &cfb).unwrap();
                let pape = p.pape.as_ref().unwrap();
                if pape.estimate != 0.0 || pape.se != 0.0 {
                    problems.push(format!("{label} PAPE {} (k={k}, seed={seed})", pape.estimate));
                }
                let v = p.value.as_ref().unwrap().estimate;
                if v != arm_mean(decision) {
                    problems.push(format!("{label} value {v} vs arm mean {}", arm_mean(decision)));
                }
            }
            // OWL and CWL as fitted; check markers wherever they come out constant.
            let (train, test) = (trial.data.subset(&(0..1000).collect::<Vec<_>>()), trial.data.subset(&(1000..n).collect::<Vec<_>>()));
            let encoder = Encoder::fit(&train, true);
            let tr = EncodedTrial::from_design(&encoder.transform(&train).unwrap(), &train).unwrap();
            let te = EncodedTrial::from_design(&encoder.transform(&test).unwrap(), &test).unwrap();
            for run in fit_methods(&acceptance_methods(seed, &["OWL", "CWL"]), &tr, &te, &cfb) {
                let Ok(s) = &run.result else {
                    problems.push(format!("{} failed", run.id()));
                    continue;
                };
                let cells = performance_cells(&run.result);
                let got = undefined_columns(&cells);
                let mut want: Vec<&str> = Vec::new();
                if s.rule.flags.constant_rule {
                    let side = if s.rule.decisions[0] == 1 { ["b_neg", "b_neg_se"] } else { ["b_pos", "b_pos_se"] };
                    want.extend(side);
                    *constant_seen.entry(format!("{} treat-{}", run.id(), if s.rule.decisions[0] == 1 { "all" } else { "none" })).or_insert(0) += 1;
                }
                want.extend(C_COLS);
                if got != want {
                    problems.push(format!("{} markers {:?}, expected {:?}", run.id(), got, want));
                }
            }
        }
    }
    Outcome::check(
        problems.is_empty(),
        format!("4 scenarios x 3 seeds; constant OWL/CWL fits seen {constant_seen:?}; problems {problems:?}"),
    )
}

fn criterion_3() -> Outcome {
    let (runs, elapsed) = threshold_runs();
    let mut lines = Vec::new();
    let mut pass = failures(runs).is_empty();
    for (m, spec) in METHODS.iter().enumerate() {
        let reports: Vec<&OracleReport> = runs.iter().filter_map(|s| s.oracle[m].as_ref()).collect();
        if reports.len() != runs.len() {
            pass = false;
            lines.push(format!("{} failed on some seeds", spec.id));
            continue;
        }
        let acc = reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
        let shortfall = reports.iter().map(|r| r.shortfall.unwrap_or(f64::NAN)).sum::<f64>() / reports.len() as f64;
        let ok = if spec.family.is_ite() { acc >= 0.80 && shortfall <= 0.03 } else { shortfall <= 0.05 };
        pass &= ok;
        let (pos, zero) = runs
            .iter()
            .filter_map(|s| s.regions[m])
            .fold((0.0, 0.0), |(p, z), (a, b)| (p + a / runs.len() as f64, z + b / runs.len() as f64));
        lines.push(format!(
            "{}{} acc {acc:.3} (tau>0 {pos:.3}, tau=0 {zero:.3}) shortfall {shortfall:.3}",
            if ok { "" } else { "!" },
            spec.id
        ));
    }
    pass &= elapsed.as_secs_f64() < 900.0;
    Outcome::check(pass, format!("{:.0}s; {}", elapsed.as_secs_f64(), lines.join(", ")))
}

fn criterion_4() -> Outcome {
    let (runs, elapsed) = scenario_runs(Effect::Null);
    let (mut cells, mut within) = (0, 0);
    let mut c_by_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in &runs {
        for r in &seed.runs {
            let Ok(s) = &r.result else { continue };
            cells += 1;
            if let Ok(p) = &s.performance.pape {
                within += (p.estimate.abs() <= 2.0 * p.se) as usize;
            }
            if let Ok(c) = &s.performance.c_benefit {
                c_by_method.entry(r.id()).or_default().push(c.estimate);
            }
        }
    }
    let expected_cells = runs.len() * METHODS.len();
    let share = within as f64 / expected_cells as f64;
    let mut c_ok = true;
    let mut c_lines = Vec::new();
    for (id, cs) in &c_by_method {
        let m = cs.iter().sum::<f64>() / cs.len() as f64;
        let inside = cs.iter().filter(|c| (0.45..=0.55).contains(*c)).count();
        c_ok &= (0.45..=0.55).contains(&m) && cs.len() == runs.len();
        c_lines.push(format!("{id} {m:.3} ({inside}/{})", cs.len()));
    }
    Outcome::check(
        cells == expected_cells && share >= 0.90 && c_ok,
        format!(
            "{:.0}s; |PAPE| <= 2 SE in {within}/{expected_cells} cells ({share:.3}); mean c per method (seeds inside [0.45, 0.55]): {}",
            elapsed.as_secs_f64(),
            c_lines.join(", ")
        ),
    )
}

fn criterion_5() -> Outcome {
    let (runs, _) = threshold_runs();
    let idx = |ids: &[&str], m: &AgreementMatrix| -> Vec<usize> {
        ids.iter().filter_map(|id| m.methods.iter().position(|x| x == id)).collect()
    };
    let parametric = ["SL", "TL", "XL", "DRL", "RL"];
    let direct = ["AL", "MCM", "OWL", "CWL"];
    let (mut within, mut between, mut wins, mut seeds) = (0.0, 0.0, 0, 0);
    for s in runs {
        let p = idx(&parametric, &s.agreement);
        let d = idx(&direct, &s.agreement);
        let (Some(w), Some(b)) = (s.agreement.mean_kappa(&p, &p), s.agreement.mean_kappa(&p, &d)) else { continue };
        within += w;
        between += b;
        wins += (w > b) as usize;
        seeds += 1;
    }
    let (w, b) = (within / seeds as f64, between / seeds as f64);
    Outcome::check(
        seeds == runs.len() && w > b,
        format!("mean kappa within parametric {w:.3} vs parametric-direct {b:.3}; ordering holds on {wins}/{seeds} seeds"),
    )
}

fn criterion_6() -> Outcome {
    let (runs, _) = threshold_runs();
    let pos = |id: &str| METHODS.iter().position(|m| m.id == id).unwrap();
    let mut rates = Vec::new();
    for s in runs {
        let (Ok(al), Ok(mcm)) = (&s.runs[pos("AL")].result, &s.runs[pos("MCM")].result) else {
            return Outcome::check(false, "AL or MCM failed");
        };
        let agree = al.rule.decisions.iter().zip(&mcm.rule.decisions).filter(|(x, z)| x == z).count();
        rates.push(agree as f64 / al.rule.decisions.len() as f64);
    }
    let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    Outcome::check(
        min >= 0.95,
        format!("agreement per seed {:?}", rates.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>()),
    )
}

// ---------------------------------------------------------------------------

fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, beta: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        beta.len(),
        (0..beta.len()).map(|j| {
            let h = 1e-5 * beta[j].abs().max(1.0);
            let (mut up, mut down) = (beta.clone(), beta.clone());
            up[j] += h;
            down[j] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        }),
    )
}

fn gradient_error(f: &dyn Fn(&DVector<f64>) -> f64, g: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let fd = fd_gradient(f, beta);
    (&fd - g).amax() / g.amax().max(1e-12)
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn criterion_7() -> Outcome {
    let (trial, _) = generate(&ScenarioSpec::threshold(400, 77)).unwrap();
    let data = {
        let design = itr_core::dataset::encode(&trial.data, true).unwrap();
        EncodedTrial::from_design(&design, &trial.data).unwrap()
    };
    let y = data.outcome_f64();
    let p = data.x.ncols();
    let mut rng = stream_rng(7, 7);
    let betas: Vec<DVector<f64>> =
        (0..5).map(|_| DVector::from_iterator(p, (0..p).map(|_| rng.random_range(-1.0..1.0)))).collect();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };

    let weights: Vec<f64> = (0..data.n()).map(|_| rng.random_range(0.2..2.0)).collect();
    let logistic = LogisticObjective { x: &data.x, y: &y, weights: Some(&weights), l2: 1e-3 };
    // Value oracle for the A-learning and MCM losses from the M-form directly.
    let mut loss_mismatch: f64 = 0.0;
    for beta in &betas {
        bump("logistic", gradient_error(&|b| logistic.value(b), &logistic.gradient(beta), beta));
        for (name, method) in [("A-learning", BenefitMethod::ALearning), ("MCM", BenefitMethod::ModifiedCovariate)] {
            let (z, w) = modified_problem(&data, method);
            let objective = LogisticObjective { x: &z, y: &y, weights: w.as_deref(), l2: 1e-4 };
            bump(name, gradient_error(&|b| objective.value(b), &objective.gradient(beta), beta));
            let f = &data.x * beta;
            let direct: f64 = (0..data.n())
                .map(|i| {
                    let a = data.treatment[i] as f64;
                    let (v, wt) = match method {
                        BenefitMethod::ALearning => ((a - data.propensity) * f[i], 1.0),
                        BenefitMethod::ModifiedCovariate => ((2.0 * a - 1.0) * f[i], 1.0 / if a == 1.0 { data.propensity } else { 1.0 - data.propensity }),
                    };
                    wt * (-y[i] * v + softplus(v))
                })
                .sum::<f64>()
                / data.n() as f64
                + 1e-4 * beta.rows(1, p - 1).norm_squared();
            loss_mismatch = loss_mismatch.max((direct - objective.value(beta)).abs());
        }
        let mu_hat: Vec<f64> = (0..data.n()).map(|i| 0.3 + 0.01 * (i % 7) as f64).collect();
        let rloss =
            RLoss { x: &data.x, y: &y, treatment: &data.treatment, mu_hat: &mu_hat, propensity: data.propensity, lambda: 1e-3 };
        bump("R-loss", gradient_error(&|b| rloss.value(b), &rloss.gradient(beta), beta));
    }

    // Causal forest: closed-form leaf estimate vs grid argmin of the weighted R-loss.
    let cfg = CausalForestConfig { n_trees: 50, min_leaf: 5, seed: 3, ..CausalForestConfig::default() };
    let forest = fit_causal_forest(&data, &cfg).unwrap();
    let (probe, _) = generate(&ScenarioSpec::threshold(20, 78)).unwrap();
    let probe_x = Encoder::fit(&trial.data, true).transform(&probe.data).unwrap().values;
    let mut cf_err: f64 = 0.0;
    for row in 0..probe_x.nrows() {
        let closed = forest.raw_tau_row(&probe_x, row);
        let loss = |t: f64| forest.weighted_r_loss(&probe_x, row, t);
        let (mut lo, mut hi, mut best) = (-3.0, 3.0, 0.0);
        for _ in 0..6 {
            let step = (hi - lo) / 1000.0;
            best = (0..=1000).map(|k| lo + k as f64 * step).min_by(|p, q| loss(*p).total_cmp(&loss(*q))).unwrap();
            (lo, hi) = (best - 2.0 * step, best + 2.0 * step);
        }
        cf_err = cf_err.max((closed - best).abs());
    }
    let grad_ok = worst.values().all(|&e| e <= 1e-4);
    Outcome::check(
        grad_ok && loss_mismatch < 1e-12 && cf_err <= 1e-6,
        format!(
            "max relative gradient error {worst:?}; M-form loss mismatch {loss_mismatch:.1e}; causal forest |closed - grid argmin| {cf_err:.1e} over {} rows",
            probe_x.nrows()
        ),
    )
}

fn criterion_8() -> Outcome {
    let Ok(path) = std::env::var("ITR_IST_CONFIG") else {
        return Outcome { status: Status::NotRun, detail: "set ITR_IST_CONFIG to a run config for the trial extract".into() };
    };
    let start = Instant::now();
    let config = match RunConfig::load(std::path::Path::new(&path)) {
        Ok(c) => c,
        Err(e) => return Outcome::check(false, format!("config: {e}")),
    };
    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, format!("pipeline: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let mut c_ok = true;
    let mut c_lines = Vec::new();
    for r in report.methods.iter().filter(|r| r.method.family == Family::ParametricMeta) {
        let c = r.result.as_ref().ok().and_then(|s| s.performance.c_benefit.as_ref().ok()).map(|c| c.estimate);
        c_ok &= c.is_some_and(|c| (0.45..=0.55).contains(&c));
        c_lines.push(format!("{} {}", r.id(), c.map_or("n/a".into(), |c| format!("{c:.3}"))));
    }
    let family = |id: &str| report.methods.iter().find(|r| r.id() == id).map(|r| r.method.family);
    let (mut low, mut total) = (0, 0);
    let m = &report.agreement;
    for i in 0..m.methods.len() {
        for j in i + 1..m.methods.len() {
            if family(&m.methods[i]) == family(&m.methods[j]) {
                continue;
            }
            if let Ok(k) = m.kappa[i][j] {
                total += 1;
                low += (k < 0.4) as usize;
            }
        }
    }
    let failures = report.failures().len();
    Outcome::check(
        failures == 0 && c_ok && 2 * low > total && secs < 1800.0,
        format!(
            "{secs:.0}s, {failures} failures; c-for-benefit {}; between-family kappa < 0.4 in {low}/{total}",
            c_lines.join(", ")
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("metric oracle equivalence", criterion_1),
        ("constant-rule identities", criterion_2),
        ("oracle recovery, threshold scenario", criterion_3),
        ("null scenario calibration", criterion_4),
        ("family concordance", criterion_5),
        ("AL/MCM near-equivalence", criterion_6),
        ("numerical hygiene", criterion_7),
        ("trial-data qualitative reproduction", criterion_8),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::NotRun => "NOT RUN",
        };
        println!("criterion {} {label}: {name} [{:.1}s] {}", k + 1, start.elapsed().as_secs_f64(), outcome.detail);
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
