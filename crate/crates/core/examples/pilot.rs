//! Calibration run that freezes the pilot-derived acceptance thresholds.
//!
//! Uses seeds from 100000 up, disjoint from the acceptance seeds, and writes
//! `pilot/pilot_results.toml` under the crate root.
//!
//! ```text
//! cargo run --release -p crqw --example pilot
//! ```

use std::fmt::Write as _;
use std::time::Instant;

use crqw::apps::{self, DemoMode, Stress};
use crqw::experiment::{sweep_scaling, SweepSpec};
use crqw::primitives::PrimitiveKind;
use crqw::SimConfig;
use rayon::prelude::*;

const SEED0: u64 = 100_000;
const SLACK: f64 = 1.5;

fn sweep(prim: PrimitiveKind, workload: &str, seeds: u64, horizon: u64) -> crqw::experiment::ScalingTable {
    sweep_scaling(&SweepSpec {
        base: SimConfig::default(),
        primitive: prim,
        workload: workload.into(),
        schedulers: vec!["greedy".into(), "random-delay:laziest".into()],
        processes: vec![16, 64, 256, 1024],
        seeds: (SEED0..SEED0 + seeds).collect(),
        horizon,
        drain: 1_000_000,
    })
    .expect("sweep")
}

fn round2(x: f64) -> f64 {
    (x * 100.0).ceil() / 100.0
}

fn main() {
    let start = Instant::now();
    let mut out = String::new();
    writeln!(out, "# Generated by `cargo run --release -p crqw --example pilot`.").unwrap();
    writeln!(out, "# Pilot seeds start at {SEED0}; frozen thresholds apply measured values times {SLACK}.\n").unwrap();

    let reg = sweep(PrimitiveKind::BackOnRegister, "one-shot-write", 20, 100_000);
    let naive_reg = sweep(PrimitiveKind::NaiveRegister, "one-shot-write", 20, 100_000);
    let imp = sweep(PrimitiveKind::ImprovedCas, "cas-flood", 20, 2000);
    let naive_cas = sweep(PrimitiveKind::NaiveCas, "cas-flood", 20, 2000);
    let reg_fit = reg.fit.expect("register fit");
    let imp_fit = imp.fit.expect("cas fit");
    let busy_p99 = reg.row(1024).and_then(|r| r.busy_p99).unwrap_or(0) as f64;
    writeln!(out, "[scaling]").unwrap();
    writeln!(out, "register_fit_alpha = {:.4}", reg_fit.alpha).unwrap();
    writeln!(out, "register_fit_beta = {:.4}", reg_fit.beta).unwrap();
    writeln!(out, "register_max_rel_residual = {:.4}", reg_fit.max_rel_residual).unwrap();
    writeln!(out, "register_fit_ratio_1024_over_16 = {:.4}", reg_fit.eval(1024) / reg_fit.eval(16)).unwrap();
    writeln!(out, "cas_fit_alpha = {:.4}", imp_fit.alpha).unwrap();
    writeln!(out, "cas_fit_beta = {:.4}", imp_fit.beta).unwrap();
    writeln!(out, "cas_max_rel_residual = {:.4}", imp_fit.max_rel_residual).unwrap();
    let ratio_w = naive_reg.row(1024).unwrap().mean_latency / reg.row(1024).unwrap().mean_latency;
    let ratio_c = naive_cas.row(1024).unwrap().mean_latency / imp.row(1024).unwrap().mean_latency;
    writeln!(out, "write_mean_ratio_1024 = {ratio_w:.4}").unwrap();
    writeln!(out, "cas_flood_mean_ratio_1024 = {ratio_c:.4}").unwrap();
    let naive_growth = naive_reg.row(1024).unwrap().mean_latency / naive_reg.row(16).unwrap().mean_latency;
    writeln!(out, "naive_write_mean_ratio_1024_over_16 = {naive_growth:.4}\n").unwrap();

    writeln!(out, "[busy]").unwrap();
    writeln!(out, "register_busy_p99_1024 = {busy_p99}").unwrap();
    let kappa_b = round2(SLACK * busy_p99 / 10.0).max(0.5);
    writeln!(out, "kappa_b = {kappa_b}\n").unwrap();

    let stress = Stress::default().apply(&SimConfig::default().with_processes(64));
    let basic: Vec<_> = (SEED0..SEED0 + 50)
        .into_par_iter()
        .map(|s| apps::failure_demo(&stress.clone().with_seed(s), DemoMode::Basic, "greedy", 1_000_000, true).unwrap())
        .collect();
    let improved: Vec<_> = (SEED0..SEED0 + 10)
        .into_par_iter()
        .map(|s| apps::failure_demo(&stress.clone().with_seed(s), DemoMode::Improved, "greedy", 1_000_000, false).unwrap())
        .collect();
    let rate = basic.iter().filter(|r| r.first_blowup.is_some()).count() as f64 / basic.len() as f64;
    let maxq = improved.iter().map(|r| r.max_queue_c).max().unwrap_or(0) as f64;
    let imp_blowups = improved.iter().filter(|r| r.first_blowup.is_some()).count();
    writeln!(out, "[failure]").unwrap();
    writeln!(out, "basic_blowup_rate = {rate:.4}").unwrap();
    writeln!(out, "improved_blowups = {imp_blowups}").unwrap();
    writeln!(out, "improved_max_queue = {maxq}").unwrap();
    writeln!(out, "kappa_i = {}", round2(SLACK * maxq / 6.0)).unwrap();
    // Successful opCAS per log2 P timesteps under the flood, from the sweep runs.
    let successes_per_step = improved.iter().map(|r| r.completed as f64 / r.steps as f64).sum::<f64>() / improved.len() as f64;
    writeln!(out, "improved_completions_per_step = {successes_per_step:.4}\n").unwrap();

    let cfg = SimConfig::default().with_processes(256);
    let game = apps::decoupled_game(&cfg, PrimitiveKind::BackOnRegister, 50, SEED0, 1_000_000).unwrap();
    let l_emp = apps::measure_hp_latency(&cfg, PrimitiveKind::BackOnRegister, SEED0..SEED0 + 20, 1_000_000).unwrap().unwrap();
    writeln!(out, "[lowerbound]").unwrap();
    writeln!(out, "l_emp_256 = {l_emp}").unwrap();
    writeln!(out, "max_loss = {}", game.trials.iter().map(|t| t.loss).max().unwrap_or(0)).unwrap();
    writeln!(out, "coupling_failures = {}", game.coupling_failures()).unwrap();
    writeln!(out, "\n# pilot runtime {:.1}s", start.elapsed().as_secs_f64()).unwrap();

    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("pilot/pilot_results.toml");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, &out).unwrap();
    print!("{out}");
}
