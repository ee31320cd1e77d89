use std::path::Path;

use subgroup_shrink::data::{infer_schema, load_manifest, load_trial};
use subgroup_shrink::pipeline::Estimator;
use subgroup_shrink::simulation::{
    run_manifest_text, run_sweep, true_effects, write_results, DgpConfig, SweepConfig,
};

#[test]
fn default_targets() {
    let t = true_effects(&DgpConfig::default()).unwrap();
    assert_eq!(t.tau, vec![2.0, 3.0, 3.0, 4.5]);
    assert_eq!(t.gamma, vec![2.5, 3.75, 2.5]);
}

#[test]
fn js_never_worse_than_unconstrained_at_the_grid_ends() {
    let sweep = SweepConfig {
        e_grid: vec![0.0, 0.1],
        replications: 2000,
        workers: 4,
        base_seed: 5,
        ..SweepConfig::default()
    };
    let r = run_sweep(&DgpConfig::default(), &sweep).unwrap();
    for row in &r.rows {
        assert_eq!(row.failures, 0);
        let js = &row.estimators[&Estimator::JamesStein];
        assert!(js.relative_risk <= 1.0, "e = {}: {}", row.e, js.relative_risk);
        assert_eq!(row.estimators[&Estimator::Unconstrained].relative_risk, 1.0);
    }
    let ridge_end = r.rows[1].estimators[&Estimator::GeneralizedRidge].relative_risk;
    assert!(ridge_end > 1.0);
}

#[test]
fn different_seeds_give_different_draws() {
    let run = |seed| {
        let sweep = SweepConfig {
            e_grid: vec![0.0],
            replications: 20,
            base_seed: seed,
            ..SweepConfig::default()
        };
        let mut out = Vec::new();
        write_results(&run_sweep(&DgpConfig::default(), &sweep).unwrap(), &mut out).unwrap();
        out
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn run_manifest_records_the_configuration() {
    let text = run_manifest_text(&DgpConfig::default(), &SweepConfig::default());
    for key in ["format_version: 1", "seed: 20250701", "replications: 5000", "weights: prevalence", "dgp.n: 500"] {
        assert!(text.contains(key), "missing {key}");
    }
    assert!(!text.contains("workers"));
}

#[test]
fn sweep_rejects_bad_configuration() {
    let bad = SweepConfig { e_grid: vec![-0.1], ..SweepConfig::default() };
    assert!(run_sweep(&DgpConfig::default(), &bad).is_err());
    let bad = SweepConfig { workers: 0, ..SweepConfig::default() };
    assert!(run_sweep(&DgpConfig::default(), &bad).is_err());
    let dgp = DgpConfig { sigma1: 0.0, ..DgpConfig::default() };
    assert!(run_sweep(&dgp, &SweepConfig { replications: 5, ..SweepConfig::default() }).is_err());
}

#[test]
fn bundled_files_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let schema = infer_schema(dir.join("demo_trial.csv")).unwrap();
    let names: Vec<&str> = schema.covariates().iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["sex", "race"]);
    assert_eq!(schema.covariates()[1].levels, ["Asian", "White"]);
    let data = load_trial(dir.join("demo_trial.csv"), &schema).unwrap();
    assert_eq!(data.n(), 500);
    let q: Vec<usize> = ["step1_style_manifest.txt", "ate_only_manifest.txt", "incompatible_manifest.txt"]
        .iter()
        .map(|f| load_manifest(dir.join(f), &schema).unwrap().q())
        .collect();
    assert_eq!(q, [3, 1, 3]);
}
