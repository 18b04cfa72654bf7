use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crqw::apps::{self, DemoMode, Stress};
use crqw::engine::{EngineOptions, World};
use crqw::experiment::{self, AssertLevel, ExperimentPlan, SweepSpec};
use crqw::history::History;
use crqw::hwbench::{self, BenchConfig, MachineInfo, Mix, Trend};
use crqw::lincheck::{brute_force_linearizable, linearize, oracle_ops, CompletedHistory, ORACLE_CAP};
use crqw::primitives::PrimitiveKind;
use crqw::{SimConfig, SimError};

#[derive(Parser)]
#[command(name = "crqw", version, about = "Stochastic CRQW simulator and experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range N..M (exclusive) or N..=M.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Keep per-run histories and metric rows.
    #[arg(long)]
    keep_trace: bool,
    /// off, fast or full.
    #[arg(long, default_value = "fast")]
    assert_level: String,
    /// Also write a gnuplot script next to the CSVs.
    #[arg(long)]
    gnuplot_stub: bool,
}

impl Common {
    fn seed_list(&self, default: &[u64]) -> crqw::Result<Vec<u64>> {
        match (&self.seed, &self.seeds) {
            (Some(s), _) => Ok(vec![*s]),
            (None, Some(r)) => experiment::parse_seed_range(r),
            (None, None) => Ok(default.to_vec()),
        }
    }

    fn base_config(&self) -> crqw::Result<SimConfig> {
        match &self.config {
            None => Ok(SimConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                let cfg = SimConfig::from_toml_str(&text).map_err(|e| SimError::config(format!("{}: {e}", p.display())))?;
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    fn level(&self) -> crqw::Result<AssertLevel> {
        AssertLevel::parse(&self.assert_level)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute an experiment plan.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Latency scaling sweep with a log2 P fit and the naive baseline.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "backon-register")]
        primitive: String,
        /// Defaults to one-shot-write for registers and cas-flood for CAS.
        #[arg(long)]
        workload: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "greedy,random-delay:laziest")]
        schedulers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "16,64,256,1024")]
        processes: Vec<u32>,
        #[arg(long, default_value_t = 2000)]
        horizon: u64,
        #[arg(long, default_value_t = 1_000_000)]
        drain: u64,
    },
    /// Check linearizability of fuzzed runs, or of a recorded history.
    Lincheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "backon-register")]
        primitive: String,
        #[arg(long, default_value_t = 8)]
        processes: u32,
        #[arg(long, default_value = "greedy")]
        scheduler: String,
        #[arg(long, default_value = "poisson:0.3:0.2")]
        workload: String,
        #[arg(long, default_value_t = 2000)]
        horizon: u64,
        /// History CSV produced with the same config, primitive and seed.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// CAS queue blow-up demonstration.
    FailureDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "basic")]
        mode: String,
        #[arg(long, default_value_t = 64)]
        processes: u32,
        #[arg(long, default_value_t = 1_000_000)]
        horizon: u64,
        #[arg(long, default_value = "greedy")]
        scheduler: String,
        /// Run with the configured parameters instead of the stress set.
        #[arg(long)]
        no_stress: bool,
    },
    /// Decoupled game for one-shot Set.
    Lowerbound {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "backon-register")]
        primitive: String,
        #[arg(long, default_value_t = 256)]
        processes: u32,
        #[arg(long, default_value_t = 200)]
        trials: u64,
        #[arg(long, default_value_t = 1_000_000)]
        horizon: u64,
    },
    /// Native atomics microbenchmark.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        threads: Vec<usize>,
        #[arg(long)]
        ops: Option<u64>,
        #[arg(long, default_value_t = 10)]
        reps: u32,
        #[arg(long, value_delimiter = ',')]
        mix: Vec<String>,
        /// 10^8 operations per thread.
        #[arg(long)]
        full: bool,
        /// Pin workers to CPUs.
        #[arg(long)]
        pin: bool,
    },
}

enum Outcome {
    Pass,
    Fail,
}

fn write_file(path: &Path, bytes: &[u8]) -> crqw::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn cmd_run(c: &Common) -> crqw::Result<Outcome> {
    let path = c.config.as_ref().ok_or_else(|| SimError::config("run needs --config PLAN"))?;
    let mut plan = ExperimentPlan::from_path(path)?;
    if c.seed.is_some() || c.seeds.is_some() {
        plan.set_seeds(&c.seed_list(&[])?);
    }
    plan.keep_trace = c.keep_trace;
    plan.assert_level = c.level()?;
    let report = experiment::run_plan(&plan, &c.out)?;
    if c.gnuplot_stub {
        write_file(&c.out.join("plot.gp"), experiment::gnuplot_stub().as_bytes())?;
    }
    println!("{} grid points, {} failures; summary in {}", report.rows.len(), report.failures.len(), c.out.join("summary.csv").display());
    for (p, s, f) in report.failures.iter().take(10) {
        eprintln!("point {p} seed {s}: {f}");
    }
    Ok(if report.passed() { Outcome::Pass } else { Outcome::Fail })
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    c: &Common,
    primitive: &str,
    workload: Option<String>,
    schedulers: Vec<String>,
    processes: Vec<u32>,
    horizon: u64,
    drain: u64,
) -> crqw::Result<Outcome> {
    let prim = PrimitiveKind::parse(primitive)?;
    let workload = workload.unwrap_or_else(|| if prim.is_cas() { "cas-flood".into() } else { "one-shot-write".into() });
    let seeds = c.seed_list(&(0..20).collect::<Vec<_>>())?;
    let base = c.base_config()?;
    let naive = if prim.is_cas() { PrimitiveKind::NaiveCas } else { PrimitiveKind::NaiveRegister };
    let mut spec = SweepSpec { base, primitive: prim, workload, schedulers, processes, seeds, horizon, drain };
    let table = experiment::sweep_scaling(&spec)?;
    spec.primitive = naive;
    let baseline = experiment::sweep_scaling(&spec)?;
    let mut buf = Vec::new();
    experiment::write_scaling_csv(&table, &mut buf)?;
    write_file(&c.out.join("scaling.csv"), &buf)?;
    let mut buf = Vec::new();
    experiment::write_scaling_csv(&baseline, &mut buf)?;
    write_file(&c.out.join("scaling_baseline.csv"), &buf)?;
    if c.gnuplot_stub {
        let gp = "set datafile separator ','\nset key autotitle columnhead\nset logscale x 2\n\
                  set terminal pngcairo size 900,600\nset output 'scaling.png'\n\
                  plot 'scaling.csv' using 3:5 with linespoints title 'hp latency', \\\n     \
                  'scaling_baseline.csv' using 3:5 with linespoints title 'naive hp latency'\n";
        write_file(&c.out.join("plot.gp"), gp.as_bytes())?;
    }
    for (r, b) in table.rows.iter().zip(&baseline.rows) {
        println!(
            "P={:5} hp={:>8} mean={:9.2}  naive mean={:9.2}  ratio={:6.2}",
            r.processes,
            r.hp_latency.map_or("-".into(), |h| h.to_string()),
            r.mean_latency,
            b.mean_latency,
            b.mean_latency / r.mean_latency
        );
    }
    if let Some(f) = table.fit {
        println!("fit: {:.3} * log2 P + {:.3}, max relative residual {:.3}", f.alpha, f.beta, f.max_rel_residual);
    }
    Ok(Outcome::Pass)
}

#[allow(clippy::too_many_arguments)]
fn cmd_lincheck(
    c: &Common,
    primitive: &str,
    processes: u32,
    scheduler: &str,
    workload: &str,
    horizon: u64,
    trace: Option<PathBuf>,
) -> crqw::Result<Outcome> {
    let prim = PrimitiveKind::parse(primitive)?;
    let base = c.base_config()?.with_processes(processes);
    if let Some(path) = trace {
        let seed = c.seed.unwrap_or(base.seed);
        let cfg = base.with_seed(seed);
        let world = World::for_primitive(&cfg, prim, EngineOptions::default())?;
        let h = History::read_csv(std::fs::File::open(&path)?)?;
        let ch = CompletedHistory::from_history(&h);
        let lin = linearize(&ch, world.object.primitive());
        let top = oracle_ops(&ch, |o| o.parent.is_none());
        let oracle = if top.len() <= ORACLE_CAP { Some(brute_force_linearizable(&top, world.object.kind, 0)?) } else { None };
        match &lin {
            Ok(_) => println!("{}: linearizable ({} operations)", path.display(), ch.ops.len()),
            Err(e) => println!("{}: NOT linearizable: {e}", path.display()),
        }
        if let Some(o) = oracle {
            println!("oracle: {}", if o { "linearizable" } else { "not linearizable" });
        }
        return Ok(if lin.is_ok() && oracle != Some(false) { Outcome::Pass } else { Outcome::Fail });
    }
    let seeds = c.seed_list(&(0..100).collect::<Vec<_>>())?;
    let mut failures = 0;
    for &seed in &seeds {
        let cfg = base.clone().with_seed(seed);
        let r = experiment::run_one(&cfg, prim, scheduler, workload, horizon, 0, AssertLevel::Full, c.keep_trace)?;
        if r.lincheck != Some(true) || !r.failures.is_empty() {
            failures += 1;
            eprintln!("seed {seed}: {}", r.failures.join("; "));
            if let Some(tr) = &r.trace {
                write_file(&c.out.join(format!("lincheck_seed{seed}_history.csv")), tr)?;
            }
        }
    }
    println!("{} runs, {failures} failing", seeds.len());
    Ok(if failures == 0 { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_failure_demo(c: &Common, mode: &str, processes: u32, horizon: u64, scheduler: &str, no_stress: bool) -> crqw::Result<Outcome> {
    let mode = DemoMode::parse(mode)?;
    let mut base = c.base_config()?.with_processes(processes);
    if !no_stress {
        base = Stress::default().apply(&base);
    }
    let seeds = c.seed_list(&(0..50).collect::<Vec<_>>())?;
    let reports = {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&s| apps::failure_demo(&base.clone().with_seed(s), mode, scheduler, horizon, mode == DemoMode::Basic))
            .collect::<crqw::Result<Vec<_>>>()?
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "seed", "processes", "steps", "max_queue_c", "first_blowup", "mean_latency", "completed"])?;
    for r in &reports {
        w.write_record([
            r.mode.as_str().to_string(),
            r.seed.to_string(),
            r.processes.to_string(),
            r.steps.to_string(),
            r.max_queue_c.to_string(),
            r.first_blowup.map_or(String::new(), |t| t.to_string()),
            format!("{:.4}", r.mean_latency),
            r.completed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.into_error()))?;
    write_file(&c.out.join(format!("failure_demo_{}.csv", mode.as_str())), &bytes)?;
    let blown = reports.iter().filter(|r| r.first_blowup.is_some()).count();
    let maxq = reports.iter().map(|r| r.max_queue_c).max().unwrap_or(0);
    println!("{}: blow-up in {blown}/{} seeds, max queue {maxq}", mode.as_str(), reports.len());
    Ok(Outcome::Pass)
}

fn cmd_lowerbound(c: &Common, primitive: &str, processes: u32, trials: u64, horizon: u64) -> crqw::Result<Outcome> {
    let prim = PrimitiveKind::parse(primitive)?;
    let cfg = c.base_config()?.with_processes(processes);
    let base_seed = c.seed.unwrap_or(cfg.seed);
    let report = apps::decoupled_game(&cfg, prim, trials, base_seed, horizon)?;
    let l_emp = apps::measure_hp_latency(&cfg, prim, base_seed..base_seed + 20, horizon)?.unwrap_or(u64::MAX);
    let m = prim.cell_count() as f64;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "t_star", "loss", "joint_t_star", "joint_loss", "coupled"])?;
    for t in &report.trials {
        w.write_record([
            t.seed.to_string(),
            t.t_star.map_or(String::new(), |x| x.to_string()),
            t.loss.to_string(),
            t.joint_t_star.map_or(String::new(), |x| x.to_string()),
            t.joint_loss.to_string(),
            t.coupled().to_string(),
        ])?;
    }
    write_file(&c.out.join("lowerbound_trials.csv"), &w.into_inner().map_err(|e| SimError::Io(e.into_error()))?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "p_t_all"])?;
    for (t, p) in report.p_s.iter().enumerate() {
        w.write_record([t.to_string(), format!("{p:.6}")])?;
    }
    write_file(&c.out.join("lowerbound_curve.csv"), &w.into_inner().map_err(|e| SimError::Io(e.into_error()))?)?;
    let bound = m * l_emp as f64;
    println!(
        "coupling failures: {}; L_emp = {l_emp}; Pr[loss <= M*L_emp] = {:.4}; large jumps: {}",
        report.coupling_failures(),
        report.loss_at_most(bound),
        report.large_jumps(3.0 * bound).len()
    );
    Ok(if report.coupling_failures() == 0 { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_bench(c: &Common, threads: Vec<usize>, ops: Option<u64>, reps: u32, mix: Vec<String>, full: bool, pin: bool) -> crqw::Result<Outcome> {
    let mut cfg = if full { BenchConfig::full() } else { BenchConfig::default() };
    cfg.threads = threads;
    if let Some(n) = ops {
        cfg.ops_per_thread = n;
    }
    cfg.repetitions = reps;
    cfg.pin = pin;
    cfg.seed = c.seed.unwrap_or(0);
    if !mix.is_empty() {
        cfg.mixes = mix.iter().map(|m| Mix::parse(m)).collect::<crqw::Result<_>>()?;
    }
    let info = MachineInfo::detect();
    if cfg.threads.iter().any(|&t| t > info.hardware_threads) {
        eprintln!("warning: thread counts above {} hardware threads are oversubscribed", info.hardware_threads);
    }
    let results = hwbench::bench(&cfg)?;
    let mut buf = Vec::new();
    hwbench::write_csv(&results, &info, &mut buf)?;
    write_file(&c.out.join("bench.csv"), &buf)?;
    for r in &results {
        println!("{:18} threads={:3} mean={:.6}s sd={:.6}s", r.mix.as_str(), r.threads, r.mean_seconds, r.stddev_seconds);
    }
    match hwbench::trend_check(&results, &info) {
        Trend::Pass => println!("trend: pass"),
        Trend::Skipped(why) => println!("trend: skipped ({why})"),
        Trend::Fail(why) => println!("trend: fail ({why})"),
    }
    Ok(Outcome::Pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { common } => cmd_run(&common),
        Cmd::Sweep { common, primitive, workload, schedulers, processes, horizon, drain } => {
            cmd_sweep(&common, &primitive, workload, schedulers, processes, horizon, drain)
        }
        Cmd::Lincheck { common, primitive, processes, scheduler, workload, horizon, trace } => {
            cmd_lincheck(&common, &primitive, processes, &scheduler, &workload, horizon, trace)
        }
        Cmd::FailureDemo { common, mode, processes, horizon, scheduler, no_stress } => {
            cmd_failure_demo(&common, &mode, processes, horizon, &scheduler, no_stress)
        }
        Cmd::Lowerbound { common, primitive, processes, trials, horizon } => {
            cmd_lowerbound(&common, &primitive, processes, trials, horizon)
        }
        Cmd::Bench { common, threads, ops, reps, mix, full, pin } => cmd_bench(&common, threads, ops, reps, mix, full, pin),
    };
    match res {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e @ SimError::ContractViolation { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
