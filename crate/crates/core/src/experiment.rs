//! Experiment plans: grids of runs, CSV outputs and latency scaling sweeps.
//!
//! A plan file is TOML:
//!
//! ```toml
//! horizon = 10000
//! drain = 100000
//!
//! [base]
//! tau = 1
//!
//! [grid]
//! processes = [16, 64]
//! primitive = ["backon-register", "naive-register"]
//! scheduler = ["greedy", "random-delay:pile-up"]
//! workload = ["one-shot-write"]
//! seeds = "0..20"
//! ```
//!
//! Outputs are byte-identical across reruns of the same plan.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::audit::{audit_compliance, check_history};
use crate::engine::{EngineOptions, World};
use crate::error::{Result, SimError};
use crate::lincheck::{linearize, CompletedHistory};
use crate::metrics::{hp_latency, nearest_rank, Metrics};
use crate::object::ObjectKind;
use crate::primitives::PrimitiveKind;
use crate::sched::Scheduler;
use crate::sim::Sim;
use crate::workload::Workload;
use crate::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssertLevel {
    Off,
    /// Growth bound, psi accounting and scheduler compliance.
    #[default]
    Fast,
    /// Also the history audit and the linearizer.
    Full,
}

impl AssertLevel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(AssertLevel::Off),
            "fast" => Ok(AssertLevel::Fast),
            "full" => Ok(AssertLevel::Full),
            _ => Err(SimError::config(format!("unknown assert level '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SeedSpec {
    List(Vec<u64>),
    Range(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    processes: Option<Vec<u32>>,
    #[serde(default)]
    primitive: Vec<String>,
    #[serde(default)]
    scheduler: Vec<String>,
    #[serde(default)]
    workload: Vec<String>,
    seeds: Option<SeedSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    base: Option<toml::Value>,
    horizon: Option<u64>,
    drain: Option<u64>,
    #[serde(default)]
    grid: GridFile,
}

/// Parses `a..b` (exclusive) or `a..=b`.
pub fn parse_seed_range(s: &str) -> Result<Vec<u64>> {
    let bad = || SimError::config(format!("bad seed range '{s}' (expected N..M)"));
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        let n: u64 = s.trim().parse().map_err(|_| bad())?;
        return Ok(vec![n]);
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { b.checked_add(1).ok_or_else(bad)? } else { b };
    if end < a {
        return Err(bad());
    }
    Ok((a..end).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub cfg: SimConfig,
    pub primitive: PrimitiveKind,
    pub scheduler: String,
    pub workload: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub base: SimConfig,
    pub horizon: u64,
    /// Extra steps without new invocations so late operations can return.
    pub drain: u64,
    pub points: Vec<GridPoint>,
    pub keep_trace: bool,
    pub assert_level: AssertLevel,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: PlanFile = toml::from_str(text).map_err(|e| SimError::config(format!("plan: {e}")))?;
        let base = match file.base {
            None => SimConfig::default(),
            Some(v) => SimConfig::from_toml_value(v).map_err(|e| SimError::config(format!("plan.base: {e}")))?,
        };
        base.validate().map_err(|e| SimError::config(format!("plan.base: {e}")))?;
        let horizon = file.horizon.unwrap_or(base.max_timesteps);
        let drain = file.drain.unwrap_or(0);
        let g = file.grid;
        let processes = g.processes.unwrap_or_else(|| vec![base.processes]);
        let seeds = match g.seeds {
            None => vec![base.seed],
            Some(SeedSpec::List(v)) => v,
            Some(SeedSpec::Range(s)) => parse_seed_range(&s).map_err(|e| SimError::config(format!("plan.grid.seeds: {e}")))?,
        };
        let mut prims = Vec::new();
        for (i, id) in g.primitive.iter().enumerate() {
            prims.push(PrimitiveKind::parse(id).map_err(|e| SimError::config(format!("plan.grid.primitive[{i}]: {e}")))?);
        }
        let mut points = Vec::new();
        for &p in &processes {
            let cfg = base.clone().with_processes(p);
            for &prim in &prims {
                for (si, sched) in g.scheduler.iter().enumerate() {
                    Scheduler::from_id(sched, 0, p, cfg.tau, false)
                        .map_err(|e| SimError::config(format!("plan.grid.scheduler[{si}]: {e}")))?;
                    for (wi, wl) in g.workload.iter().enumerate() {
                        Workload::from_id(wl, p, ObjectKind::for_primitive(prim), 0, cfg.value_mask())
                            .map_err(|e| SimError::config(format!("plan.grid.workload[{wi}]: {e}")))?;
                        points.push(GridPoint {
                            index: points.len(),
                            cfg: cfg.clone(),
                            primitive: prim,
                            scheduler: sched.clone(),
                            workload: wl.clone(),
                            seeds: seeds.clone(),
                        });
                    }
                }
            }
        }
        Ok(ExperimentPlan { base, horizon, drain, points, keep_trace: false, assert_level: AssertLevel::Fast })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Replaces every point's seed list.
    pub fn set_seeds(&mut self, seeds: &[u64]) {
        for p in &mut self.points {
            p.seeds = seeds.to_vec();
        }
    }
}

/// Everything measured on one (grid point, seed) run.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub seed: u64,
    pub steps: u64,
    /// (invoke time, completed, max latency, unfinished)
    pub latency: Vec<(u64, u64, u64, u64)>,
    pub per_time_max: Vec<u64>,
    pub completed: u64,
    pub latency_total: u128,
    pub max_latency: u64,
    pub unfinished: u64,
    pub max_queue_c: usize,
    pub max_queue_w: usize,
    pub max_phi: f64,
    pub busy_lengths: Vec<u64>,
    pub first_blowup: Option<u64>,
    pub growth_checks: u64,
    pub growth_ok: bool,
    pub psi_ok: bool,
    pub psi_rise_in_busy: u64,
    pub heavily_delayed: u64,
    pub audit: Option<bool>,
    pub lincheck: Option<bool>,
    pub failures: Vec<String>,
    pub metrics_rows: Option<Vec<u8>>,
    pub trace: Option<Vec<u8>>,
}

/// Runs one seed of one grid point.
#[allow(clippy::too_many_arguments)]
pub fn run_one(
    cfg: &SimConfig,
    prim: PrimitiveKind,
    scheduler: &str,
    workload: &str,
    horizon: u64,
    drain: u64,
    level: AssertLevel,
    keep_trace: bool,
) -> Result<RunOutcome> {
    let keep_history = keep_trace || level != AssertLevel::Off;
    let opts = EngineOptions { keep_history, monitor: level == AssertLevel::Full, ..Default::default() };
    let world = World::for_primitive(cfg, prim, opts)?;
    let initial: Vec<_> = world.mem.cells.iter().map(|c| c.value).collect();
    let metrics = Metrics::new(&world, keep_trace, false);
    let sched = Scheduler::from_id(scheduler, cfg.seed, cfg.processes, cfg.tau, keep_history)?;
    let wl = Workload::from_id(workload, cfg.processes, world.object.kind, cfg.seed, cfg.value_mask())?;
    let mut sim = Sim::new(world, sched, wl).with_metrics(metrics);
    sim.run_drained(horizon, drain)?;
    let mut m = sim.metrics.take().expect("metrics attached");
    m.finish(&sim.world);

    let mut out = RunOutcome {
        seed: cfg.seed,
        steps: sim.world.t(),
        completed: m.latency.completed,
        latency_total: m.latency.total,
        max_latency: m.latency.max,
        unfinished: m.latency.unfinished_count(),
        max_queue_c: m.max_queue_c,
        max_queue_w: m.max_queue_w,
        max_phi: m.max_phi,
        busy_lengths: m.busy_c.lengths(),
        first_blowup: m.first_blowup,
        growth_checks: m.growth_checks,
        growth_ok: m.growth_ok(),
        psi_ok: m.psi_mismatch.is_none(),
        psi_rise_in_busy: m.psi_rise_in_busy,
        heavily_delayed: m.heavily_delayed_total,
        per_time_max: m.latency.per_time_max(),
        ..Default::default()
    };
    let mut times: Vec<u64> = m.latency.by_time.keys().chain(m.latency.unfinished.keys()).copied().collect();
    times.sort_unstable();
    times.dedup();
    for t in times {
        let r = m.latency.report_at(t);
        out.latency.push((t, r.count, r.max, r.unfinished));
    }
    if level != AssertLevel::Off {
        if let Some(v) = m.growth_violation {
            out.failures.push(format!("growth bound violated at t={}: {} -> {}", v.t, v.before, v.after));
        }
        if let Some(t) = m.psi_mismatch {
            out.failures.push(format!("psi accounting mismatch at t={t}"));
        }
        if sim.sched.is_compliant() {
            let h = sim.world.history().expect("history kept");
            let ledger = sim.sched.ledger().expect("compliant schedulers keep coins");
            let missed = audit_compliance(h, ledger, sim.world.t());
            out.audit = Some(missed.is_empty());
            if let Some(&(p, j)) = missed.first() {
                out.failures.push(format!("scheduler compliance: process {p} unscheduled in window {j}"));
            }
        }
    }
    if level == AssertLevel::Full {
        let h = sim.world.history().expect("history kept");
        let errs = check_history(h, &initial);
        if let Some(e) = errs.first() {
            out.failures.push(format!("history audit: {e}"));
            out.audit = Some(false);
        }
        let ch = CompletedHistory::from_history(h);
        let lin = linearize(&ch, sim.world.object.primitive());
        out.lincheck = Some(lin.is_ok());
        if let Err(e) = lin {
            out.failures.push(format!("linearizability: {e}"));
        }
    }
    if keep_trace {
        let mut buf = Vec::new();
        m.write_rows_csv(&mut buf)?;
        out.metrics_rows = Some(buf);
        let mut buf = Vec::new();
        sim.world.history().expect("history kept").write_csv(&mut buf)?;
        out.trace = Some(buf);
    }
    Ok(out)
}

/// Aggregate over the seeds of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub point: usize,
    pub processes: u32,
    pub primitive: PrimitiveKind,
    pub scheduler: String,
    pub workload: String,
    pub seeds: String,
    pub runs: usize,
    pub hp_latency: Option<u64>,
    pub mean_latency: f64,
    pub max_latency: u64,
    pub unfinished: u64,
    pub max_queue: usize,
    pub busy_p99: Option<u64>,
    pub growth_ok: bool,
    pub psi_ok: bool,
    pub audit: Option<bool>,
    pub lincheck: Option<bool>,
}

fn seeds_label(seeds: &[u64]) -> String {
    match seeds {
        [] => String::new(),
        [a] => a.to_string(),
        [a, .., b] if (b - a) as usize + 1 == seeds.len() && seeds.windows(2).all(|w| w[1] == w[0] + 1) => {
            format!("{a}..{}", b + 1)
        }
        _ => seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
    }
}

fn all_some(v: impl Iterator<Item = Option<bool>>) -> Option<bool> {
    v.fold(None, |acc, x| match (acc, x) {
        (a, None) => a,
        (None, Some(b)) => Some(b),
        (Some(a), Some(b)) => Some(a && b),
    })
}

pub fn summarize(point: &GridPoint, runs: &[RunOutcome]) -> SummaryRow {
    let mut maxima: Vec<u64> = runs.iter().flat_map(|r| r.per_time_max.iter().copied()).collect();
    let mut busy: Vec<u64> = runs.iter().flat_map(|r| r.busy_lengths.iter().copied()).collect();
    let completed: u64 = runs.iter().map(|r| r.completed).sum();
    let total: u128 = runs.iter().map(|r| r.latency_total).sum();
    SummaryRow {
        point: point.index,
        processes: point.cfg.processes,
        primitive: point.primitive,
        scheduler: point.scheduler.clone(),
        workload: point.workload.clone(),
        seeds: seeds_label(&point.seeds),
        runs: runs.len(),
        hp_latency: hp_latency(&mut maxima, point.cfg.processes),
        mean_latency: if completed == 0 { 0.0 } else { total as f64 / completed as f64 },
        max_latency: runs.iter().map(|r| r.max_latency).max().unwrap_or(0),
        unfinished: runs.iter().map(|r| r.unfinished).sum(),
        max_queue: runs.iter().map(|r| r.max_queue_c.max(r.max_queue_w)).max().unwrap_or(0),
        busy_p99: nearest_rank(&mut busy, 0.99),
        growth_ok: runs.iter().all(|r| r.growth_ok),
        psi_ok: runs.iter().all(|r| r.psi_ok),
        audit: all_some(runs.iter().map(|r| r.audit)),
        lincheck: all_some(runs.iter().map(|r| r.lincheck)),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn latency_str(v: Option<u64>) -> String {
    match v {
        Some(u64::MAX) => "inf".to_string(),
        other => opt(other),
    }
}

/// Result of executing a plan.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<SummaryRow>,
    /// (point, seed, message)
    pub failures: Vec<(usize, u64, String)>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 17] = [
    "point",
    "processes",
    "primitive",
    "scheduler",
    "workload",
    "seeds",
    "runs",
    "hp_latency",
    "mean_latency",
    "max_latency",
    "unfinished",
    "max_queue",
    "busy_p99",
    "growth_ok",
    "psi_ok",
    "audit",
    "lincheck",
];

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SUMMARY_HEADER)?;
    for r in rows {
        wr.write_record([
            r.point.to_string(),
            r.processes.to_string(),
            r.primitive.as_str().to_string(),
            r.scheduler.clone(),
            r.workload.clone(),
            r.seeds.clone(),
            r.runs.to_string(),
            latency_str(r.hp_latency),
            format!("{:.4}", r.mean_latency),
            r.max_latency.to_string(),
            r.unfinished.to_string(),
            r.max_queue.to_string(),
            opt(r.busy_p99),
            r.growth_ok.to_string(),
            r.psi_ok.to_string(),
            opt(r.audit),
            opt(r.lincheck),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Executes every grid point (seeds in parallel) and writes `summary.csv`,
/// `latency.csv`, `metrics.csv` and, on failure, `failures.csv` under `out`.
/// With `keep_trace`, per-run histories and metric rows go to `out/traces/`.
pub fn run_plan(plan: &ExperimentPlan, out: &Path) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out)?;
    if plan.keep_trace {
        std::fs::create_dir_all(out.join("traces"))?;
    }
    let jobs: Vec<(usize, u64)> = plan.points.iter().flat_map(|p| p.seeds.iter().map(move |&s| (p.index, s))).collect();
    let outcomes: Vec<Result<RunOutcome>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let p = &plan.points[i];
            let cfg = p.cfg.clone().with_seed(seed);
            run_one(&cfg, p.primitive, &p.scheduler, &p.workload, plan.horizon, plan.drain, plan.assert_level, plan.keep_trace)
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut latency = csv::Writer::from_writer(Vec::new());
    latency.write_record(["point", "seed", "invoked_at", "completed", "max_latency", "unfinished"])?;
    let mut metrics = csv::Writer::from_writer(Vec::new());
    metrics.write_record([
        "point",
        "seed",
        "steps",
        "completed",
        "mean_latency",
        "max_queue_c",
        "max_queue_w",
        "max_phi",
        "busy_intervals",
        "first_blowup",
        "growth_checks",
        "growth_ok",
        "psi_ok",
        "psi_rise_in_busy",
        "heavily_delayed",
    ])?;
    let mut k = 0;
    for p in &plan.points {
        let runs = &outcomes[k..k + p.seeds.len()];
        k += p.seeds.len();
        for r in runs {
            for &(t, n, mx, un) in &r.latency {
                latency.write_record([
                    p.index.to_string(),
                    r.seed.to_string(),
                    t.to_string(),
                    n.to_string(),
                    mx.to_string(),
                    un.to_string(),
                ])?;
            }
            let mean = if r.completed == 0 { 0.0 } else { r.latency_total as f64 / r.completed as f64 };
            metrics.write_record([
                p.index.to_string(),
                r.seed.to_string(),
                r.steps.to_string(),
                r.completed.to_string(),
                format!("{mean:.4}"),
                r.max_queue_c.to_string(),
                r.max_queue_w.to_string(),
                format!("{:.6e}", r.max_phi),
                r.busy_lengths.len().to_string(),
                opt(r.first_blowup),
                r.growth_checks.to_string(),
                r.growth_ok.to_string(),
                r.psi_ok.to_string(),
                r.psi_rise_in_busy.to_string(),
                r.heavily_delayed.to_string(),
            ])?;
            for f in &r.failures {
                failures.push((p.index, r.seed, f.clone()));
            }
            if let (Some(m), Some(tr)) = (&r.metrics_rows, &r.trace) {
                write_atomic(&out.join(format!("traces/point{}_seed{}_metrics.csv", p.index, r.seed)), m)?;
                write_atomic(&out.join(format!("traces/point{}_seed{}_history.csv", p.index, r.seed)), tr)?;
            }
        }
        rows.push(summarize(p, runs));
    }
    let mut summary = Vec::new();
    write_summary_csv(&rows, &mut summary)?;
    write_atomic(&out.join("summary.csv"), &summary)?;
    write_atomic(&out.join("latency.csv"), &latency.into_inner().map_err(|e| SimError::Io(e.into_error()))?)?;
    write_atomic(&out.join("metrics.csv"), &metrics.into_inner().map_err(|e| SimError::Io(e.into_error()))?)?;
    let manifest = out.join("failures.csv");
    if failures.is_empty() {
        if manifest.exists() {
            std::fs::remove_file(&manifest)?;
        }
    } else {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["point", "seed", "failure"])?;
        for (p, s, f) in &failures {
            w.write_record([p.to_string(), s.to_string(), f.clone()])?;
        }
        write_atomic(&manifest, &w.into_inner().map_err(|e| SimError::Io(e.into_error()))?)?;
    }
    Ok(ExperimentReport { rows, failures })
}

/// A gnuplot script plotting hp-latency and mean latency against P from
/// `summary.csv`.
pub fn gnuplot_stub() -> &'static str {
    "set datafile separator ','\n\
     set key autotitle columnhead\n\
     set logscale x 2\n\
     set xlabel 'processes'\n\
     set ylabel 'latency (timesteps)'\n\
     set terminal pngcairo size 900,600\n\
     set output 'latency.png'\n\
     plot 'summary.csv' using 2:8 with linespoints title 'hp latency', \\\n\
     \x20    'summary.csv' using 2:9 with linespoints title 'mean latency'\n"
}

/// Least-squares fit of `y = alpha * log2(P) + beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogFit {
    pub alpha: f64,
    pub beta: f64,
    /// max over points of |y - fit| / y
    pub max_rel_residual: f64,
}

impl LogFit {
    pub fn eval(&self, p: u32) -> f64 {
        self.alpha * (p as f64).log2() + self.beta
    }
}

pub fn fit_log2(points: &[(u32, f64)]) -> Option<LogFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(p, _)| (p as f64).log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(points).map(|(x, &(_, y))| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let beta = my - alpha * mx;
    let max_rel_residual = xs
        .iter()
        .zip(points)
        .map(|(x, &(_, y))| ((y - (alpha * x + beta)) / y).abs())
        .fold(0.0, f64::max);
    Some(LogFit { alpha, beta, max_rel_residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub processes: u32,
    pub hp_latency: Option<u64>,
    pub mean_latency: f64,
    pub busy_p99: Option<u64>,
    pub max_queue: usize,
    pub unfinished: u64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    pub primitive: PrimitiveKind,
    pub workload: String,
    pub rows: Vec<ScalingRow>,
    /// Fit of the hp-latency estimates (None if any is missing or infinite).
    pub fit: Option<LogFit>,
}

impl ScalingTable {
    pub fn row(&self, p: u32) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.processes == p)
    }
}

/// Parameters of a scaling sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub primitive: PrimitiveKind,
    pub workload: String,
    pub schedulers: Vec<String>,
    pub processes: Vec<u32>,
    pub seeds: Vec<u64>,
    pub horizon: u64,
    pub drain: u64,
}

/// Runs `primitive` for every P under every scheduler and seed and fits the
/// hp-latency estimates against log2 P.
pub fn sweep_scaling(spec: &SweepSpec) -> Result<ScalingTable> {
    if spec.processes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::config("process counts must be sorted ascending"));
    }
    let mut rows = Vec::new();
    for &p in &spec.processes {
        let jobs: Vec<(&str, u64)> =
            spec.schedulers.iter().flat_map(|s| spec.seeds.iter().map(move |&seed| (s.as_str(), seed))).collect();
        let runs = jobs
            .par_iter()
            .map(|&(sched, seed)| {
                let cfg = spec.base.clone().with_processes(p).with_seed(seed);
                run_one(&cfg, spec.primitive, sched, &spec.workload, spec.horizon, spec.drain, AssertLevel::Off, false)
            })
            .collect::<Result<Vec<_>>>()?;
        let point = GridPoint {
            index: rows.len(),
            cfg: spec.base.clone().with_processes(p),
            primitive: spec.primitive,
            scheduler: spec.schedulers.join(";"),
            workload: spec.workload.clone(),
            seeds: spec.seeds.clone(),
        };
        let s = summarize(&point, &runs);
        rows.push(ScalingRow {
            processes: p,
            hp_latency: s.hp_latency,
            mean_latency: s.mean_latency,
            busy_p99: s.busy_p99,
            max_queue: s.max_queue,
            unfinished: s.unfinished,
            runs: s.runs,
        });
    }
    let pts: Option<Vec<(u32, f64)>> = rows
        .iter()
        .map(|r| r.hp_latency.filter(|&h| h != u64::MAX).map(|h| (r.processes, h as f64)))
        .collect();
    let fit = pts.and_then(|p| fit_log2(&p));
    Ok(ScalingTable { primitive: spec.primitive, workload: spec.workload.clone(), rows, fit })
}

pub fn write_scaling_csv<W: Write>(t: &ScalingTable, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "primitive",
        "workload",
        "processes",
        "runs",
        "hp_latency",
        "mean_latency",
        "busy_p99",
        "max_queue",
        "unfinished",
        "fit",
        "residual",
    ])?;
    for r in &t.rows {
        let (fit, res) = match (t.fit, r.hp_latency) {
            (Some(f), Some(h)) if h != u64::MAX => {
                let v = f.eval(r.processes);
                (format!("{v:.4}"), format!("{:.4}", (h as f64 - v) / h as f64))
            }
            _ => (String::new(), String::new()),
        };
        wr.write_record([
            t.primitive.as_str().to_string(),
            t.workload.clone(),
            r.processes.to_string(),
            r.runs.to_string(),
            latency_str(r.hp_latency),
            format!("{:.4}", r.mean_latency),
            opt(r.busy_p99),
            r.max_queue.to_string(),
            r.unfinished.to_string(),
            fit,
            res,
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seed_range("3..=4").unwrap(), vec![3, 4]);
        assert_eq!(parse_seed_range("7").unwrap(), vec![7]);
        assert!(parse_seed_range("5..2").is_err());
        assert!(parse_seed_range("a..b").is_err());
    }

    #[test]
    fn seed_labels_compress_ranges() {
        assert_eq!(seeds_label(&[0, 1, 2]), "0..3");
        assert_eq!(seeds_label(&[4]), "4");
        assert_eq!(seeds_label(&[1, 5]), "1;5");
    }

    #[test]
    fn exact_log_fit() {
        let pts: Vec<(u32, f64)> = [16u32, 64, 256, 1024].iter().map(|&p| (p, 3.0 * (p as f64).log2() + 2.0)).collect();
        let f = fit_log2(&pts).unwrap();
        assert!((f.alpha - 3.0).abs() < 1e-9 && (f.beta - 2.0).abs() < 1e-9);
        assert!(f.max_rel_residual < 1e-12);
    }

    #[test]
    fn bad_grid_entries_name_their_path() {
        let err = ExperimentPlan::from_toml("[grid]\nprimitive = [\"backon-register\"]\nscheduler = [\"greedy\", \"bogus\"]\nworkload = [\"one-shot-write\"]\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("plan.grid.scheduler[1]"), "{err}");
        let err = ExperimentPlan::from_toml("[base]\nprocesses = 0\n").unwrap_err().to_string();
        assert!(err.contains("plan.base"), "{err}");
        let err = ExperimentPlan::from_toml("[base]\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("plan.base"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }
}
