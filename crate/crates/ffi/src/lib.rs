//! C ABI for the crqw simulator.
//!
//! A `CrqwSim` owns one simulated machine (object, scheduler, workload).
//! Every fallible call returns a [`CrqwStatus`]; on failure the message is
//! available from [`crqw_last_error`] on the same thread until the next
//! failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crqw::engine::{EngineOptions, World};
use crqw::lincheck::{linearize, CompletedHistory};
use crqw::primitives::PrimitiveKind;
use crqw::sched::Scheduler;
use crqw::sim::Sim;
use crqw::workload::Workload;
use crqw::{SimConfig, SimError};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrqwStatus {
    Ok = 0,
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration, primitive, scheduler or workload id.
    Config = 3,
    /// An engine precondition was broken.
    Contract = 4,
    Io = 5,
    /// The recorded history failed the linearizability check.
    NotLinearizable = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Opaque simulator handle.
pub struct CrqwSim {
    sim: Sim,
    completed: u64,
    max_latency: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn fail(status: CrqwStatus, msg: impl Into<String>) -> CrqwStatus {
    set_error(msg);
    status
}

fn status_of(e: &SimError) -> CrqwStatus {
    match e {
        SimError::ContractViolation { .. } | SimError::ProcessBusy { .. } => CrqwStatus::Contract,
        SimError::Io(_) | SimError::Csv(_) => CrqwStatus::Io,
        _ => CrqwStatus::Config,
    }
}

fn guard(f: impl FnOnce() -> CrqwStatus) -> CrqwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            fail(CrqwStatus::Panic, msg.unwrap_or_else(|| "panic".into()))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, CrqwStatus> {
    if p.is_null() {
        return Err(fail(CrqwStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(CrqwStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn build(config: Option<&str>, primitive: &str, scheduler: &str, workload: &str, processes: u32, seed: u64) -> crqw::Result<CrqwSim> {
    let mut cfg = match config {
        Some(text) => SimConfig::from_toml_str(text).map_err(|e| SimError::config(e.to_string()))?,
        None => SimConfig::default(),
    };
    if processes > 0 {
        cfg = cfg.with_processes(processes);
    }
    cfg = cfg.with_seed(seed);
    cfg.validate()?;
    let prim = PrimitiveKind::parse(primitive)?;
    let world = World::for_primitive(&cfg, prim, EngineOptions::full())?;
    let sched = Scheduler::from_id(scheduler, seed, cfg.processes, cfg.tau, false)?;
    let wl = Workload::from_id(workload, cfg.processes, world.object.kind, seed, cfg.value_mask())?;
    Ok(CrqwSim { sim: Sim::new(world, sched, wl), completed: 0, max_latency: 0 })
}

/// Creates a simulator. `config_toml` may be null for the defaults;
/// `processes` 0 keeps the configured count. On success `*out` holds a
/// handle to release with [`crqw_sim_free`].
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_new(
    config_toml: *const c_char,
    primitive: *const c_char,
    scheduler: *const c_char,
    workload: *const c_char,
    processes: u32,
    seed: u64,
    out: *mut *mut CrqwSim,
) -> CrqwStatus {
    guard(|| {
        if out.is_null() {
            return fail(CrqwStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let config = if config_toml.is_null() {
            None
        } else {
            match str_arg(config_toml, "config_toml") {
                Ok(s) => Some(s),
                Err(s) => return s,
            }
        };
        let args = (|| Ok((str_arg(primitive, "primitive")?, str_arg(scheduler, "scheduler")?, str_arg(workload, "workload")?)))();
        let (p, s, w) = match args {
            Ok(a) => a,
            Err(status) => return status,
        };
        match build(config, p, s, w, processes, seed) {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(sim));
                CrqwStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must come from [`crqw_sim_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_free(sim: *mut CrqwSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

fn with_sim(sim: *mut CrqwSim, f: impl FnOnce(&mut CrqwSim) -> CrqwStatus) -> CrqwStatus {
    guard(|| match unsafe { sim.as_mut() } {
        Some(s) => f(s),
        None => fail(CrqwStatus::NullPointer, "sim is null"),
    })
}

fn step_once(s: &mut CrqwSim) -> crqw::Result<()> {
    s.sim.step()?;
    for c in s.sim.world.completions() {
        s.completed += 1;
        s.max_latency = s.max_latency.max(c.latency());
    }
    Ok(())
}

/// Executes one timestep.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_step(sim: *mut CrqwSim) -> CrqwStatus {
    with_sim(sim, |s| match step_once(s) {
        Ok(()) => CrqwStatus::Ok,
        Err(e) => fail(status_of(&e), e.to_string()),
    })
}

/// Executes up to `steps` timesteps, stopping early once the workload is
/// exhausted and every operation has returned.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_run(sim: *mut CrqwSim, steps: u64) -> CrqwStatus {
    with_sim(sim, |s| {
        for _ in 0..steps {
            let t = s.sim.world.t();
            if t > 0 && s.sim.workload.exhausted(t) && s.sim.world.quiescent() {
                break;
            }
            if let Err(e) = step_once(s) {
                return fail(status_of(&e), e.to_string());
            }
        }
        CrqwStatus::Ok
    })
}

/// Current timestep (number of executed steps). 0 for null.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_time(sim: *const CrqwSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.sim.world.t())
}

/// Top-level operations completed so far.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_completed(sim: *const CrqwSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.completed)
}

/// Operations invoked but not yet returned.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_in_flight(sim: *const CrqwSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.sim.world.in_flight() as u64)
}

/// Largest latency among completed operations.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_max_latency(sim: *const CrqwSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.max_latency)
}

/// Checks the history recorded so far for linearizability. Returns
/// `NotLinearizable` with the reason in [`crqw_last_error`] on failure.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_lincheck(sim: *mut CrqwSim) -> CrqwStatus {
    with_sim(sim, |s| {
        let Some(h) = s.sim.world.history() else {
            return fail(CrqwStatus::Config, "history recording is off");
        };
        let ch = CompletedHistory::from_history(h);
        match linearize(&ch, s.sim.world.object.primitive()) {
            Ok(_) => CrqwStatus::Ok,
            Err(e) => fail(CrqwStatus::NotLinearizable, e.to_string()),
        }
    })
}

/// Writes the history recorded so far as CSV to `path`.
///
/// # Safety
/// `sim` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crqw_sim_write_history(sim: *mut CrqwSim, path: *const c_char) -> CrqwStatus {
    let path = match str_arg(path, "path") {
        Ok(p) => p.to_owned(),
        Err(s) => return s,
    };
    with_sim(sim, |s| {
        let Some(h) = s.sim.world.history() else {
            return fail(CrqwStatus::Config, "history recording is off");
        };
        let res = std::fs::File::create(&path).map_err(SimError::from).and_then(|f| h.write_csv(std::io::BufWriter::new(f)));
        match res {
            Ok(()) => CrqwStatus::Ok,
            Err(e) => fail(status_of(&e), format!("{path}: {e}")),
        }
    })
}

/// Message of the last failing call on this thread; empty if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn crqw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn crqw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
