use itr_core::causal_forest::{fit_causal_forest, CausalForestConfig};
use itr_core::dataset::{encode, ingest_csv, split_by_center, EncodedTrial, Encoder, Schema, SplitSpec, SplitUnit};
use itr_core::direct_rules::{fit_a_learning, fit_mcm, fit_owl, BenefitConfig, HingeRuleConfig};
use itr_core::evaluation::{evaluate_rule, AgreementMatrix, CForBenefitConfig};
use itr_core::learners::forest::ForestConfig;
use itr_core::metalearners::{fit_meta_learner, BaseLearner, MetaLearnerKind, MetaOptions};
use itr_core::rule::{ThresholdRule, TreatmentRule};
use itr_core::synthetic::{draw_trial, Effect, ScenarioSpec, SyntheticTrial};
use itr_core::virtual_twins::{fit_virtual_twins, VirtualTwinsConfig};

fn schema_of(trial: &SyntheticTrial) -> Schema {
    let (cat, cont): (Vec<_>, Vec<_>) = trial.data.covariates.iter().partition(|c| c.is_categorical());
    Schema {
        treatment: "A".into(),
        outcome: "Y".into(),
        center: None,
        continuous: cont.iter().map(|c| c.name.clone()).collect(),
        categorical: cat.iter().map(|c| c.name.clone()).collect(),
    }
}

fn train_test(effect: Effect, n: usize, seed: u64) -> (EncodedTrial, EncodedTrial) {
    let trial = draw_trial(&ScenarioSpec::new(n, effect, seed)).unwrap();
    let spec = SplitSpec { train_fraction: 0.6, unit: SplitUnit::Patient, seed };
    let (train, test) = split_by_center(&trial.data, &spec).unwrap();
    let encoder = Encoder::fit(&train, true);
    (
        EncodedTrial::from_design(&encoder.transform(&train).unwrap(), &train).unwrap(),
        EncodedTrial::from_design(&encoder.transform(&test).unwrap(), &test).unwrap(),
    )
}

fn small_forest() -> BaseLearner {
    BaseLearner::forest_with_trees(40)
}

/// Every method family as a boxed rule fitted on `train`.
fn fit_all(train: &EncodedTrial, seed: u64) -> Vec<(String, Box<dyn TreatmentRule>)> {
    let mut rules: Vec<(String, Box<dyn TreatmentRule>)> = Vec::new();
    let options = MetaOptions { seed, ..MetaOptions::default() };
    for kind in MetaLearnerKind::ALL {
        let model = fit_meta_learner(kind, train, &BaseLearner::parametric(), &options).unwrap();
        rules.push((kind.id().to_string(), Box::new(ThresholdRule::new(model))));
    }
    let model = fit_meta_learner(MetaLearnerKind::T, train, &small_forest(), &options).unwrap();
    rules.push(("TL-RF".into(), Box::new(ThresholdRule::new(model))));
    let cf = fit_causal_forest(train, &CausalForestConfig { n_trees: 60, seed, ..CausalForestConfig::default() }).unwrap();
    rules.push(("CausalForest".into(), Box::new(ThresholdRule::new(cf))));
    let vt_config = VirtualTwinsConfig {
        forest: ForestConfig { n_trees: 40, ..VirtualTwinsConfig::default().forest },
        seed,
        ..VirtualTwinsConfig::default()
    };
    rules.push(("VT".into(), Box::new(fit_virtual_twins(train, &vt_config).unwrap())));
    rules.push(("AL".into(), Box::new(fit_a_learning(train, &BenefitConfig::default()).unwrap())));
    rules.push(("MCM".into(), Box::new(fit_mcm(train, &BenefitConfig::default()).unwrap())));
    let owl_config = HingeRuleConfig { lambda_grid: vec![0.01, 1.0], cv_folds: 3, seed, ..HingeRuleConfig::default() };
    rules.push(("OWL".into(), Box::new(fit_owl(train, &owl_config).unwrap())));
    rules
}

#[test]
fn csv_round_trip_reproduces_the_design_matrix() {
    let trial = draw_trial(&ScenarioSpec::threshold(250, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trial.csv");
    trial.data.write_csv(&path, "A", "Y").unwrap();
    let back = ingest_csv(&path, &schema_of(&trial)).unwrap();
    assert_eq!(back.treatment, trial.data.treatment);
    assert_eq!(back.outcome, trial.data.outcome);
    assert_eq!(back.dropped_rows, 0);
    let (a, b) = (encode(&trial.data, true).unwrap(), encode(&back, true).unwrap());
    assert_eq!(a.column_names, b.column_names);
    assert_eq!(a.values, b.values);
}

#[test]
fn every_family_fits_evaluates_and_repeats_exactly() {
    let (train, test) = train_test(Effect::Threshold { delta: 0.4, feature: 0, cut: 0.0 }, 900, 11);
    let cfb = CForBenefitConfig { n_bootstrap: 20, ..CForBenefitConfig::default() };
    let first = fit_all(&train, 4);
    let second = fit_all(&train, 4);
    let mut decisions = Vec::new();
    for ((id, rule), (_, again)) in first.iter().zip(&second) {
        let d = rule.decide(&test.x);
        assert_eq!(d, again.decide(&test.x), "{id} is not reproducible");
        assert_eq!(d.len(), test.n());
        let scores = rule.benefit_score(&test.x);
        if let Some(s) = &scores {
            if id != "AL" && id != "MCM" {
                assert!(s.iter().all(|t| (-1.0..=1.0).contains(t)), "{id} effect outside [-1, 1]");
            }
        }
        let perf = evaluate_rule(&d, scores.as_deref(), &test.treatment, &test.outcome, &cfb).unwrap();
        assert!((0.0..=1.0).contains(&perf.p_r));
        assert_eq!(perf.c_benefit.is_ok(), scores.is_some(), "{id}");
        decisions.push(d);
    }
    let ids: Vec<String> = first.iter().map(|(id, _)| id.clone()).collect();
    let agreement = AgreementMatrix::compute(&ids, &decisions).unwrap();
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            assert_eq!(agreement.kappa[i][j], agreement.kappa[j][i]);
        }
        if let Ok(k) = agreement.kappa[i][i] {
            assert!((k - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn strong_constant_effect_is_treated_by_parametric_rules() {
    let (train, test) = train_test(Effect::Constant { delta: 0.3 }, 2500, 21);
    let options = MetaOptions { seed: 1, ..MetaOptions::default() };
    for kind in MetaLearnerKind::ALL {
        let model = fit_meta_learner(kind, &train, &BaseLearner::parametric(), &options).unwrap();
        let d = ThresholdRule::new(model).decide(&test.x);
        let share = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        assert!(share >= 0.95, "{} treats {share:.3}", kind.id());
    }
    for (id, rule) in [
        ("AL", fit_a_learning(&train, &BenefitConfig::default()).unwrap()),
        ("MCM", fit_mcm(&train, &BenefitConfig::default()).unwrap()),
    ] {
        let d = rule.decide(&test.x);
        let share = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        assert!(share >= 0.95, "{id} treats {share:.3}");
    }
}

#[test]
fn patient_split_partitions_rows() {
    let trial = draw_trial(&ScenarioSpec::threshold(301, 8)).unwrap();
    let spec = SplitSpec { train_fraction: 2.0 / 3.0, unit: SplitUnit::Patient, seed: 5 };
    let (train, test) = split_by_center(&trial.data, &spec).unwrap();
    assert_eq!(train.n_patients() + test.n_patients(), 301);
    let again = split_by_center(&trial.data, &spec).unwrap();
    assert_eq!(again.0, train);
    let treated = trial.data.treatment.iter().filter(|&&a| a == 1).count();
    let split_treated = train.treatment.iter().chain(&test.treatment).filter(|&&a| a == 1).count();
    assert_eq!(treated, split_treated);
}
