use crqw::experiment::{fit_log2, parse_seed_range, run_one, run_plan, AssertLevel, ExperimentPlan};
use crqw::primitives::PrimitiveKind;
use crqw::SimConfig;

const PLAN: &str = r#"
horizon = 400
drain = 2000

[base]
tau = 1

[grid]
processes = [2, 4, 8, 16]
primitive = ["backon-register"]
scheduler = ["greedy"]
workload = ["one-shot-write"]
seeds = "0..3"
"#;

#[test]
fn empty_grid_gives_an_empty_summary() {
    let plan = ExperimentPlan::from_toml("[grid]\nprocesses = [4]\n").unwrap();
    assert!(plan.points.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let report = run_plan(&plan, dir.path()).unwrap();
    assert!(report.rows.is_empty() && report.passed());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn single_process_write_has_latency_three() {
    let cfg = SimConfig::default().with_processes(1);
    let r = run_one(&cfg, PrimitiveKind::BackOnRegister, "greedy", "one-shot-write", 100, 0, AssertLevel::Full, false).unwrap();
    assert_eq!((r.completed, r.max_latency), (1, 3));
    assert_eq!(r.lincheck, Some(true));
    assert_eq!(r.audit, Some(true));
}

#[test]
fn sweep_plan_echoes_points_and_seeds() {
    let plan = ExperimentPlan::from_toml(PLAN).unwrap();
    assert_eq!(plan.points.len(), 4);
    let dir = tempfile::tempdir().unwrap();
    let report = run_plan(&plan, dir.path()).unwrap();
    assert!(report.passed(), "{:?}", report.failures);
    let ps: Vec<u32> = report.rows.iter().map(|r| r.processes).collect();
    assert_eq!(ps, vec![2, 4, 8, 16]);
    for row in &report.rows {
        assert_eq!((row.seeds.as_str(), row.runs, row.unfinished), ("0..3", 3, 0));
        assert!(row.hp_latency.is_some());
    }
    let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rd.records().count(), 4);
    assert!(!dir.path().join("failures.csv").exists());
}

#[test]
fn run_plan_output_is_byte_reproducible() {
    let mut plan = ExperimentPlan::from_toml(PLAN).unwrap();
    plan.keep_trace = true;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_plan(&plan, a.path()).unwrap();
    run_plan(&plan, b.path()).unwrap();
    for name in ["summary.csv", "latency.csv", "metrics.csv", "traces/point2_seed1_history.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn bad_plans_are_rejected() {
    assert!(ExperimentPlan::from_toml("[grid]\nprimitive = [\"quantum\"]\n").is_err());
    assert!(ExperimentPlan::from_toml("[grid]\nbogus = 1\n").is_err());
    let e = ExperimentPlan::from_toml("[grid]\nprimitive = [\"basic-cas\"]\nscheduler = [\"greedy\"]\nworkload = [\"one-shot-write\"]\n");
    assert!(e.is_err());
    assert!(parse_seed_range("5..2").is_err());
    assert_eq!(parse_seed_range("3..=5").unwrap(), vec![3, 4, 5]);
}

#[test]
fn log_fit_recovers_a_line() {
    let pts: Vec<(u32, f64)> = [16u32, 64, 256, 1024].iter().map(|&p| (p, 5.0 * (p as f64).log2() + 2.0)).collect();
    let fit = fit_log2(&pts).unwrap();
    assert!((fit.alpha - 5.0).abs() < 1e-9 && (fit.beta - 2.0).abs() < 1e-9);
    assert!(fit.max_rel_residual < 1e-9);
}
