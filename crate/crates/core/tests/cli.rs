use std::path::Path;
use std::process::{Command, Output};

fn crqw(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crqw")).args(args).current_dir(cwd).output().expect("spawn crqw")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const PLAN: &str = r#"
horizon = 300
drain = 5000

[grid]
processes = [4]
primitive = ["backon-register"]
scheduler = ["greedy"]
workload = ["poisson:0.5:0.3"]
seeds = [0]
"#;

#[test]
fn run_writes_summary_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("plan.toml"), PLAN).unwrap();
    let o = crqw(&["run", "--config", "plan.toml", "--out", "res", "--assert-level", "full", "--keep-trace"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("res/summary.csv").exists());
    assert!(dir.path().join("res/traces/point0_seed0_history.csv").exists());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&crqw(&["run"], dir.path())), 2);
    assert_eq!(code(&crqw(&["run", "--config", "missing.toml"], dir.path())), 2);
    std::fs::write(dir.path().join("plan.toml"), PLAN).unwrap();
    assert_eq!(code(&crqw(&["run", "--config", "plan.toml", "--seeds", "9..x"], dir.path())), 2);
    assert_eq!(code(&crqw(&["run", "--config", "plan.toml", "--assert-level", "loud"], dir.path())), 2);
    assert_eq!(code(&crqw(&["frobnicate"], dir.path())), 2);
}

/// Rewrites the result of the first completed Read in a history CSV.
fn corrupt_read(src: &Path, dst: &Path) {
    let mut rd = csv::Reader::from_path(src).unwrap();
    let header = rd.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    let reads: Vec<String> = rows.iter().filter(|r| &r[1] == "op_invoke/read").map(|r| r[3].to_string()).collect();
    let mut wr = csv::Writer::from_path(dst).unwrap();
    wr.write_record(&header).unwrap();
    let mut done = false;
    for r in rows {
        if !done && &r[1] == "op_return" && reads.iter().any(|id| id == &r[3]) {
            let mut fields: Vec<String> = r.iter().map(String::from).collect();
            fields[7] = "12345".into();
            wr.write_record(&fields).unwrap();
            done = true;
        } else {
            wr.write_record(&r).unwrap();
        }
    }
    assert!(done, "no completed read in the trace");
}

#[test]
fn lincheck_of_a_corrupted_trace_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("plan.toml"), PLAN).unwrap();
    let o = crqw(&["run", "--config", "plan.toml", "--out", "res", "--keep-trace"], dir.path());
    assert_eq!(code(&o), 0);
    let trace = dir.path().join("res/traces/point0_seed0_history.csv");
    let base = ["lincheck", "--primitive", "backon-register", "--processes", "4", "--seed", "0", "--trace"];
    let ok = crqw(&[&base[..], &[trace.to_str().unwrap()]].concat(), dir.path());
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = dir.path().join("bad.csv");
    corrupt_read(&trace, &bad);
    let o = crqw(&[&base[..], &[bad.to_str().unwrap()]].concat(), dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("NOT linearizable"));
}

#[test]
fn fuzzed_lincheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = crqw(&["lincheck", "--primitive", "improved-cas", "--processes", "4", "--workload", "cas-flood:continuous", "--seeds", "0..5", "--horizon", "500"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn small_sweep_writes_scaling_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = crqw(&["sweep", "--processes", "2,4,8", "--seeds", "0..2", "--horizon", "200", "--drain", "5000", "--out", "s", "--gnuplot-stub"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["scaling.csv", "scaling_baseline.csv", "plot.gp"] {
        assert!(dir.path().join("s").join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("fit:"));
}
