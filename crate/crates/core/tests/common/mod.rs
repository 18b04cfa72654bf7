#![allow(dead_code)]

use crqw::engine::{Completion, EngineOptions, World};
use crqw::history::History;
use crqw::object::{Binding, ObjectKind};
use crqw::ops::OpSpec;
use crqw::primitives::PrimitiveKind;
use crqw::sched::Scheduler;
use crqw::sim::Sim;
use crqw::workload::{ReplayWorkload, Workload};
use crqw::{Pid, SimConfig};

pub struct Run {
    pub history: History,
    pub completions: Vec<Completion>,
    pub world: World,
}

/// Replays `(t, pid, spec)` invocations against one primitive and runs to
/// quiescence (or `horizon`).
pub fn replay(cfg: &SimConfig, prim: PrimitiveKind, sched: &str, invocations: Vec<(u64, Pid, OpSpec)>, horizon: u64) -> Run {
    let world = World::for_primitive(cfg, prim, EngineOptions::full()).expect("world");
    drive(world, cfg, sched, Workload::Replay(ReplayWorkload::new(invocations)), horizon)
}

pub fn replay_object(
    cfg: &SimConfig,
    object: ObjectKind,
    binding: &Binding,
    sched: &str,
    invocations: Vec<(u64, Pid, OpSpec)>,
    horizon: u64,
) -> Run {
    let world = World::new(cfg, object, binding, EngineOptions::full()).expect("world");
    drive(world, cfg, sched, Workload::Replay(ReplayWorkload::new(invocations)), horizon)
}

pub fn drive(world: World, cfg: &SimConfig, sched: &str, workload: Workload, horizon: u64) -> Run {
    let s = Scheduler::from_id(sched, cfg.seed, cfg.processes, cfg.tau, true).expect("scheduler");
    let mut sim = Sim::new(world, s, workload);
    let mut completions = Vec::new();
    while sim.world.t() < horizon {
        let t = sim.world.t();
        if t > 0 && sim.workload.exhausted(t) && sim.world.quiescent() {
            break;
        }
        sim.step().expect("step");
        completions.extend_from_slice(sim.world.completions());
    }
    let history = sim.world.take_history().unwrap_or_default();
    Run { history, completions, world: sim.world }
}

/// Everyone invokes `spec(pid)` at t = 0.
pub fn all_at_zero(p: u32, spec: impl Fn(Pid) -> OpSpec) -> Vec<(u64, Pid, OpSpec)> {
    (0..p).map(|i| (0, i, spec(i))).collect()
}
