//! Native microbenchmark of contended atomics: loads, stores,
//! load/modify/store and load/modify/CAS over a few shared locations.

use std::hint::black_box;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};
use std::sync::Barrier;
use std::time::Instant;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::error::{Result, SimError};

/// Smallest per-thread operation count accepted.
pub const MIN_OPS_PER_THREAD: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mix {
    Load,
    Store,
    LoadModifyStore,
    LoadModifyCas,
}

impl Mix {
    pub const ALL: [Mix; 4] = [Mix::Load, Mix::Store, Mix::LoadModifyStore, Mix::LoadModifyCas];

    pub fn as_str(self) -> &'static str {
        match self {
            Mix::Load => "load",
            Mix::Store => "store",
            Mix::LoadModifyStore => "load-modify-store",
            Mix::LoadModifyCas => "load-modify-cas",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Mix::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SimError::config(format!("unknown mix '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub threads: Vec<usize>,
    pub ops_per_thread: u64,
    pub locations: usize,
    pub repetitions: u32,
    pub mixes: Vec<Mix>,
    /// Pin worker i to CPU i mod (hardware threads). Linux only.
    pub pin: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            threads: vec![1, 2, 4, 8],
            ops_per_thread: 1_000_000,
            locations: 4,
            repetitions: 10,
            mixes: Mix::ALL.to_vec(),
            pin: false,
            seed: 0,
        }
    }
}

impl BenchConfig {
    /// The full-size configuration: 10^8 operations per thread.
    pub fn full() -> Self {
        BenchConfig { ops_per_thread: 100_000_000, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops_per_thread < MIN_OPS_PER_THREAD {
            return Err(SimError::config(format!(
                "{} operations per thread is too few to time reliably; use at least {MIN_OPS_PER_THREAD}",
                self.ops_per_thread
            )));
        }
        if self.locations == 0 {
            return Err(SimError::config("need at least one location"));
        }
        if self.repetitions == 0 {
            return Err(SimError::config("need at least one repetition"));
        }
        if self.threads.is_empty() || self.threads.contains(&0) {
            return Err(SimError::config("thread counts must be positive"));
        }
        Ok(())
    }
}

/// One location per cache-line pair, so adjacent-line prefetching does not
/// couple them.
#[repr(align(128))]
#[derive(Default)]
struct Slot(AtomicU64);

/// Host facts recorded next to every result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineInfo {
    pub hardware_threads: usize,
    /// None when the platform does not say.
    pub smt: Option<bool>,
}

impl MachineInfo {
    pub fn detect() -> Self {
        let hardware_threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        let smt = std::fs::read_to_string("/sys/devices/system/cpu/smt/active")
            .ok()
            .and_then(|s| match s.trim() {
                "1" => Some(true),
                "0" => Some(false),
                _ => None,
            });
        MachineInfo { hardware_threads, smt }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub mix: Mix,
    pub threads: usize,
    pub repetitions: u32,
    pub mean_seconds: f64,
    pub stddev_seconds: f64,
    /// Operations performed per trial, summed over threads.
    pub ops_per_trial: u64,
    pub oversubscribed: bool,
}

#[cfg(target_os = "linux")]
fn pin_to(cpu: usize) {
    // SAFETY: cpu_set_t is plain data; sched_setaffinity only reads it.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_to(_cpu: usize) {}

fn worker(mix: Mix, slots: &[Slot], ops: u64, seed: u64) -> u64 {
    let mut rng = SmallRng::seed_from_u64(seed);
    let n = slots.len();
    let mut done = 0u64;
    let mut sink = 0u64;
    for _ in 0..ops {
        let s = &slots[rng.gen_range(0..n)].0;
        match mix {
            Mix::Load => sink = sink.wrapping_add(s.load(SeqCst)),
            Mix::Store => s.store(sink, SeqCst),
            Mix::LoadModifyStore => {
                let v = s.load(SeqCst);
                s.store(v.wrapping_add(1), SeqCst);
            }
            Mix::LoadModifyCas => {
                let v = s.load(SeqCst);
                let _ = s.compare_exchange(v, v.wrapping_add(1), SeqCst, SeqCst);
            }
        }
        sink = sink.wrapping_add(1);
        done += 1;
    }
    black_box(sink);
    done
}

/// One timed trial; returns seconds.
fn trial(cfg: &BenchConfig, mix: Mix, threads: usize, rep: u32, hw: usize) -> Result<f64> {
    let slots: Vec<Slot> = (0..cfg.locations).map(|_| Slot::default()).collect();
    let barrier = Barrier::new(threads + 1);
    let (elapsed, done) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|i| {
                let slots = &slots;
                let barrier = &barrier;
                let seed = cfg.seed ^ ((rep as u64) << 32) ^ i as u64;
                let pin = cfg.pin;
                s.spawn(move || {
                    if pin {
                        pin_to(i % hw);
                    }
                    barrier.wait();
                    worker(mix, slots, cfg.ops_per_thread, seed)
                })
            })
            .collect();
        barrier.wait();
        let start = Instant::now();
        let done: u64 = handles.into_iter().map(|h| h.join().expect("bench worker panicked")).sum();
        (start.elapsed().as_secs_f64(), done)
    });
    let expect = cfg.ops_per_thread * threads as u64;
    if done != expect {
        return Err(SimError::config(format!("operation count mismatch: {done} != {expect}")));
    }
    Ok(elapsed)
}

/// Runs every mix at every thread count.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    cfg.validate()?;
    let hw = MachineInfo::detect().hardware_threads;
    let mut out = Vec::new();
    for &mix in &cfg.mixes {
        for &threads in &cfg.threads {
            let times = (0..cfg.repetitions).map(|rep| trial(cfg, mix, threads, rep, hw)).collect::<Result<Vec<_>>>()?;
            let n = times.len() as f64;
            let mean = times.iter().sum::<f64>() / n;
            let var = if times.len() > 1 { times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            out.push(BenchResult {
                mix,
                threads,
                repetitions: cfg.repetitions,
                mean_seconds: mean,
                stddev_seconds: var.sqrt(),
                ops_per_trial: cfg.ops_per_thread * threads as u64,
                oversubscribed: threads > hw,
            });
        }
    }
    Ok(out)
}

pub fn write_csv<W: Write>(results: &[BenchResult], info: &MachineInfo, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "mix",
        "threads",
        "repetitions",
        "mean_seconds",
        "stddev_seconds",
        "ops_per_trial",
        "oversubscribed",
        "hardware_threads",
        "smt",
    ])?;
    let smt = info.smt.map_or("unknown".to_string(), |b| b.to_string());
    for r in results {
        wr.write_record([
            r.mix.as_str().to_string(),
            r.threads.to_string(),
            r.repetitions.to_string(),
            format!("{:.9}", r.mean_seconds),
            format!("{:.9}", r.stddev_seconds),
            r.ops_per_trial.to_string(),
            r.oversubscribed.to_string(),
            info.hardware_threads.to_string(),
            smt.clone(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trend {
    /// Fewer than 9 non-oversubscribed thread counts available.
    Skipped(String),
    Pass,
    Fail(String),
}

/// The qualitative check: load time stays within [0.5, 3] of its
/// single-thread value, while store and CAS times are nondecreasing in the
/// thread count beyond 8 threads. Only non-oversubscribed rows count.
pub fn trend_check(results: &[BenchResult], info: &MachineInfo) -> Trend {
    if info.hardware_threads <= 8 {
        return Trend::Skipped(format!("host has {} hardware threads; need more than 8", info.hardware_threads));
    }
    let series = |mix: Mix| -> Vec<(usize, f64)> {
        let mut v: Vec<_> =
            results.iter().filter(|r| r.mix == mix && !r.oversubscribed).map(|r| (r.threads, r.mean_seconds)).collect();
        v.sort_by_key(|&(t, _)| t);
        v
    };
    let load = series(Mix::Load);
    let Some(&(1, base)) = load.first() else {
        return Trend::Skipped("no single-thread load measurement".into());
    };
    if !load.iter().any(|&(t, _)| t > 8) {
        return Trend::Skipped("no thread count above 8 was measured".into());
    }
    for &(t, s) in &load {
        let r = s / base;
        if !(0.5..=3.0).contains(&r) {
            return Trend::Fail(format!("load time at {t} threads is {r:.2}x the single-thread time"));
        }
    }
    for mix in [Mix::Store, Mix::LoadModifyStore, Mix::LoadModifyCas] {
        let s: Vec<_> = series(mix).into_iter().filter(|&(t, _)| t >= 8).collect();
        if let Some(w) = s.windows(2).find(|w| w[1].1 < w[0].1) {
            return Trend::Fail(format!("{} time drops from {} to {} threads", mix.as_str(), w[0].0, w[1].0));
        }
    }
    Trend::Pass
}
