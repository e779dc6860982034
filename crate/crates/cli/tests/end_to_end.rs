use std::path::PathBuf;
use std::process::Command;

use lvpanel_harness::{parse_config_str, run_experiment, EstimatorKind, Experiment, ExperimentConfig, McSummary};

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lvpanel-e2e-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn lvpanel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lvpanel")).args(args).output().unwrap()
}

const SMALL_EX2: &str = "experiment = example2\nscenarios = 1, 3\nt_values = 3, 6\nn = 200\nreps = 4\n";

#[test]
fn same_config_gives_identical_csv_bytes() {
    let dir = scratch_dir("determinism");
    let cfg = dir.join("ex2.cfg");
    std::fs::write(&cfg, SMALL_EX2).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        let res = lvpanel(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-svg"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        outputs.push(std::fs::read(out.join("example2_summary.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let parsed = McSummary::read_csv(&outputs[0][..]).unwrap();
    assert_eq!(parsed, run_experiment(&parse_config_str(SMALL_EX2).unwrap()).unwrap());
}

#[test]
fn every_grid_point_appears_once_per_estimator() {
    let cfg = parse_config_str(SMALL_EX2).unwrap();
    let summary = run_experiment(&cfg).unwrap();
    for s in &cfg.scenarios {
        for &t in &cfg.t_values {
            for e in &cfg.estimators {
                for metric in ["std_abs_bias", "std_mean_error"] {
                    let hits = summary
                        .rows
                        .iter()
                        .filter(|r| {
                            r.point == s.to_string() && r.x == t && r.estimator == e.as_str() && r.metric == metric
                        })
                        .count();
                    assert_eq!(hits, 1, "scenario {s}, T {t}, {}", e.as_str());
                }
            }
        }
    }
    assert_eq!(summary.rows.len(), cfg.grid_len() * cfg.estimators.len() * 2);
    assert!(summary
        .rows
        .iter()
        .all(|r| r.value.is_finite() && r.stderr.is_finite() && r.reps == 4));
}

#[test]
fn standard_errors_shrink_with_root_reps() {
    let se = |reps: usize| {
        let cfg = ExperimentConfig {
            scenarios: vec![1],
            t_values: vec![5],
            reps,
            estimators: vec![EstimatorKind::Ols, EstimatorKind::GlsKnown],
            ..ExperimentConfig::defaults(Experiment::Example2)
        };
        let s = run_experiment(&cfg).unwrap();
        ["ols", "gls_known"].map(|e| s.get("1", 5, e, "std_abs_bias").unwrap().stderr)
    };
    let (a, b, c) = (se(25), se(100), se(400));
    for j in 0..2 {
        for ratio in [a[j] / b[j], b[j] / c[j]] {
            assert!((ratio / 2.0 - 1.0).abs() < 0.3, "ratio {ratio}: {a:?} {b:?} {c:?}");
        }
    }
}

#[test]
fn example1_scenario2_bias_falls_with_t() {
    let cfg = ExperimentConfig {
        scenarios: vec![2],
        estimators: vec![EstimatorKind::GlsKnown],
        ..ExperimentConfig::defaults(Experiment::Example1)
    };
    let s = run_experiment(&cfg).unwrap();
    let series = s.series("2", "gls_known", "std_abs_bias");
    assert_eq!(series.len(), 5);
    for w in series.windows(2) {
        let ((_, v0, se0), (t1, v1, se1)) = (w[0], w[1]);
        assert!(
            v1 < v0 + 2.0 * (se0 * se0 + se1 * se1).sqrt(),
            "rise at T = {t1}: {series:?}"
        );
    }
    assert!(series[4].1 < series[0].1);
}

#[test]
fn example1_chart_has_four_panels() {
    let dir = scratch_dir("svg");
    let cfg = dir.join("ex1.cfg");
    std::fs::write(&cfg, "experiment = example1\nt_values = 3, 4\nn = 100\nreps = 2\n").unwrap();
    let res = lvpanel(&["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let svg = std::fs::read_to_string(dir.join("example1_summary_std_abs_bias.svg")).unwrap();
    assert!(svg.starts_with("<?xml"));
    for s in 1..=4 {
        assert_eq!(svg.matches(&format!(">scenario {s}<")).count(), 1);
    }
}

#[test]
fn validate_and_exit_codes() {
    let dir = scratch_dir("exit");
    let good = dir.join("good.cfg");
    std::fs::write(&good, "experiment = example2\n").unwrap();
    let res = lvpanel(&["validate", good.to_str().unwrap()]);
    assert!(res.status.success());
    let printed = String::from_utf8(res.stdout).unwrap();
    let reparsed = parse_config_str(&printed).unwrap();
    assert_eq!(reparsed, ExperimentConfig::defaults(Experiment::Example2));
    assert_eq!(reparsed.t_values, (2..=20).collect::<Vec<_>>());

    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, "experiment = example1\nreps = 0\nfoo = 1\n").unwrap();
    let res = lvpanel(&["run", bad.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("foo"), "{err}");

    let missing = lvpanel(&["run", dir.join("nope.cfg").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn diagnose_writes_family_profiles() {
    let dir = scratch_dir("diag");
    let cfg = dir.join("d.cfg");
    std::fs::write(&cfg, "experiment = diagnostics\nt_values = 3, 20\n").unwrap();
    let res = lvpanel(&[
        "diagnose",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--no-svg",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read(dir.join("diagnostics_diagnostics.csv")).unwrap();
    let s = McSummary::read_csv(&csv[..]).unwrap();
    for family in ["standard", "ramp", "linear_growth", "varying_weights"] {
        let series = s.series(family, "none", "compression_max");
        assert_eq!(series.len(), 2, "{family}");
        assert!(series[1].1 < series[0].1, "{family}: {series:?}");
    }
}
