use splitperc::harness::{
    estimate_family_constants, fluct_statistic, report_checks, run_experiment, ExperimentConfig, ExperimentKind,
    OutputFormat,
};
use splitperc::splitvec::{SplitParams, EULER_GAMMA};
use splitperc::Executor;

fn exec() -> Executor {
    Executor::new(0)
}

#[test]
fn bst_constant_estimates() {
    let est = estimate_family_constants(&SplitParams::bst(), &[1 << 14, 1 << 16, 1 << 18], 500, 11, &exec()).unwrap();
    assert_eq!(est.alpha, 1.0);
    let want = 2.0 * EULER_GAMMA - 4.0;
    assert!((est.varsigma - want).abs() < 0.1, "{} vs {want}", est.varsigma);
    assert!(est.varsigma_stderr < 0.05);
    // N = n, so the vertex path length coincides with the ball path length
    assert!((est.zeta - est.varsigma).abs() < 1e-12);
}

#[test]
fn fluct_sample_count_matches_replicas() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Fluct);
    cfg.n_grid = vec![1 << 12];
    cfg.replicas = 300;
    cfg.emit_samples = true;
    cfg.tol = 1e-5;
    let out = run_experiment(&cfg, &exec()).unwrap();
    let p = &out.report.per_n[0];
    assert_eq!(p.replicas + p.failures, 300);
    assert_eq!(out.primary[&(1 << 12)].len() as u64, p.replicas);
    assert_eq!(out.report.samples.as_ref().unwrap()[0].values.len() as u64, p.replicas);
    assert_eq!(out.report.ks.len(), 1);
    assert!(out.report.ks[0].distance > 0.0 && out.report.ks[0].distance < 1.0);
}

#[test]
fn second_cluster_shrinks_along_the_grid() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Lln);
    cfg.n_grid = vec![1 << 10, 1 << 13, 1 << 16];
    cfg.replicas = 100;
    let report = run_experiment(&cfg, &exec()).unwrap().report;
    let medians: Vec<f64> = report.per_n.iter().map(|p| p.stats["second_over_n"].median).collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
    let checks = report_checks(&report);
    assert!(checks.iter().any(|c| c.name == "second_cluster_decreasing" && c.passed));
}

#[test]
fn non_bst_fluctuations_use_estimated_constants() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Fluct);
    cfg.family = "spacings:3".into();
    cfg.n_grid = vec![1 << 12];
    cfg.replicas = 50;
    cfg.tol = 1e-5;
    let report = run_experiment(&cfg, &exec()).unwrap().report;
    assert!(report.notes.iter().any(|n| n.contains("estimated")));
    assert!(report.values["alpha"] > 0.0);
    assert_eq!(report.params, Some([3, 1, 0, 0]));
}

#[test]
fn report_json_shape() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Regular);
    cfg.h_grid = vec![6, 9];
    cfg.replicas = 40;
    cfg.tol = 1e-5;
    let out = run_experiment(&cfg, &exec()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&out.render(OutputFormat::Json).unwrap()).unwrap();
    assert_eq!(json["config"]["kind"], "regular");
    assert!(json["config"].get("threads").is_none());
    assert!(json["runtime_ms"].is_null());
    assert!(json.get("samples").is_none());
    assert_eq!(json["per_n"].as_array().unwrap().len(), 2);
    assert_eq!(json["per_n"][1]["h"], 9);
    assert_eq!(json["failures"]["count"], 0);

    cfg.timing = true;
    let timed = run_experiment(&cfg, &exec()).unwrap();
    assert!(timed.report.runtime_ms.is_some());
}

#[test]
fn statistic_rejects_tiny_trees() {
    assert!(fluct_statistic(3, 15, 1.0, 0.5).is_err());
    assert!(fluct_statistic(3, 16, 1.0, 0.5).is_ok());
    let mut cfg = ExperimentConfig::new(ExperimentKind::LevyTail);
    cfg.family = "deterministic:3".into();
    assert!(cfg.validate().is_err());
    cfg.family = "bst".into();
    cfg.n_grid = vec![1 << 10];
    assert!(cfg.validate().is_ok());
}
