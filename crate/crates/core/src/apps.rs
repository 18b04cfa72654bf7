//! Harnesses built on the engine: composed objects over bound primitives,
//! the reduced/expanded machine equivalence check, the CAS queue blow-up
//! demonstration and the decoupled game used by the lower bound.

use std::collections::HashMap;

use crate::engine::{Completion, EngineOptions, World};
use crate::error::{Result, SimError};
use crate::history::{EventKind, History};
use crate::memory::InstrKind;
use crate::metrics::{hp_latency, Metrics};
use crate::object::{Binding, ObjectKind};
use crate::ops::{OpResult, OpSpec};
use crate::primitives::{Fault, PrimitiveKind};
use crate::sched::Scheduler;
use crate::sim::{Sim, StopReason};
use crate::workload::{ReplayWorkload, Workload};
use crate::{Pid, SimConfig};

/// Output of a composed-object run.
#[derive(Debug, Clone)]
pub struct ComposedRun {
    pub history: History,
    /// Top-level completions in return order.
    pub completions: Vec<Completion>,
    pub stop: StopReason,
}

impl ComposedRun {
    /// Sorted multiset of top-level results.
    pub fn result_multiset(&self) -> Vec<OpResult> {
        let mut v: Vec<OpResult> = self.completions.iter().map(|c| c.result).collect();
        v.sort_by_key(|r| format!("{r}"));
        v
    }
}

/// Runs `object` over the primitives in `binding`, recording both the
/// composed operations and their primitive sub-operations.
pub fn run_composed(
    cfg: &SimConfig,
    object: ObjectKind,
    binding: &Binding,
    workload: Workload,
    scheduler: Scheduler,
    horizon: u64,
) -> Result<ComposedRun> {
    let world = World::new(cfg, object, binding, EngineOptions::full())?;
    let mut sim = Sim::new(world, scheduler, workload);
    let mut completions = Vec::new();
    let mut stop = StopReason::Horizon;
    while sim.world.t() < horizon {
        let t = sim.world.t();
        if t > 0 && sim.workload.exhausted(t) && sim.world.quiescent() {
            stop = StopReason::Quiescent;
            break;
        }
        sim.step()?;
        completions.extend_from_slice(sim.world.completions());
    }
    let history = sim.world.take_history().unwrap_or_default();
    Ok(ComposedRun { history, completions, stop })
}

/// Hardware-cell binding of the same shape as `binding`.
pub fn raw_binding(binding: &Binding) -> Binding {
    Binding {
        slots: binding
            .slots
            .iter()
            .map(|k| if k.is_cas() { PrimitiveKind::NaiveCas } else { PrimitiveKind::NaiveRegister })
            .collect(),
    }
}

/// One memory-level step as seen by the equivalence check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApplyRecord {
    pub t: u64,
    pub pid: Pid,
    pub instr: InstrKind,
    pub cell: u32,
    pub ticket: Option<u64>,
    pub returned: u64,
    pub post: u64,
}

fn apply_records(h: &History) -> Vec<ApplyRecord> {
    h.memory_applies()
        .filter_map(|e| match e.kind {
            EventKind::Apply { instr, cell: Some(cell), ticket, returned, post, .. } => Some(ApplyRecord {
                t: e.t,
                pid: e.pid,
                instr,
                cell,
                ticket,
                returned,
                post: post.map_or(0, |w| w.0),
            }),
            _ => None,
        })
        .collect()
}

fn top_level_results(h: &History) -> Vec<(Pid, OpResult)> {
    h.iter()
        .filter_map(|e| match e.kind {
            EventKind::OpReturn { result, parent: None } => Some((e.pid, result)),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub applies: usize,
    pub operations: usize,
    /// First differing memory step, if any.
    pub mismatch: Option<String>,
}

impl EquivalenceReport {
    pub fn equivalent(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Runs the expanded machine (local steps scheduled individually), then
/// replays the same invocations and shared-memory step times on the reduced
/// machine and compares every memory apply. `reduced_fault` is injected
/// into the reduced run only.
pub fn check_reduced_equivalence(
    cfg: &SimConfig,
    prim: PrimitiveKind,
    scheduler_id: &str,
    workload_id: &str,
    horizon: u64,
    reduced_fault: Option<Fault>,
) -> Result<EquivalenceReport> {
    let object = ObjectKind::for_primitive(prim);
    let binding = Binding::single(prim);
    let expanded_opts = EngineOptions { expanded: true, ..EngineOptions::full() };
    let world = World::new(cfg, object, &binding, expanded_opts)?;
    let sched = Scheduler::from_id(scheduler_id, cfg.seed, cfg.processes, cfg.tau, false)?;
    let wl = Workload::from_id(workload_id, cfg.processes, object, cfg.seed, cfg.value_mask())?;
    let mut sim = Sim::new(world, sched, wl);
    sim.run(horizon)?;
    let expanded = sim.world.take_history().unwrap_or_default();

    let mut steps: HashMap<u64, Vec<Pid>> = HashMap::new();
    let mut invocations = Vec::new();
    for e in expanded.iter() {
        match e.kind {
            EventKind::Invoke { instr, .. } if instr != InstrKind::Local => steps.entry(e.t).or_default().push(e.pid),
            EventKind::OpInvoke { spec, parent: None } => invocations.push((e.t, e.pid, spec)),
            _ => {}
        }
    }
    let reduced_opts = EngineOptions { fault: reduced_fault, ..EngineOptions::full() };
    let world = World::new(cfg, object, &binding, reduced_opts)?;
    let mut sim = Sim::new(world, Scheduler::replay(steps), Workload::Replay(ReplayWorkload::new(invocations)));
    let mut mismatch = None;
    if let Err(e) = sim.run(horizon) {
        // A diverging reduced run can violate the replayed schedule.
        mismatch = Some(format!("reduced replay failed: {e}"));
    }
    let reduced = sim.world.take_history().unwrap_or_default();

    let a = apply_records(&expanded);
    let b = apply_records(&reduced);
    if mismatch.is_none() {
        if let Some(i) = (0..a.len().min(b.len())).find(|&i| a[i] != b[i]) {
            mismatch = Some(format!("apply {i}: expanded {:?}, reduced {:?}", a[i], b[i]));
        } else if a.len() != b.len() {
            mismatch = Some(format!("expanded has {} applies, reduced {}", a.len(), b.len()));
        }
    }
    let ra = top_level_results(&expanded);
    let rb = top_level_results(&reduced);
    if mismatch.is_none() {
        mismatch = compare_results(&ra, &rb);
    }
    Ok(EquivalenceReport { applies: a.len(), operations: ra.len(), mismatch })
}

/// Per process, the expanded results must be a prefix of the reduced ones
/// with at most one extra: an operation whose trailing local steps were cut
/// off by the horizon has already returned in the reduced run.
fn compare_results(expanded: &[(Pid, OpResult)], reduced: &[(Pid, OpResult)]) -> Option<String> {
    let mut by_pid: HashMap<Pid, (Vec<OpResult>, Vec<OpResult>)> = HashMap::new();
    for &(p, r) in expanded {
        by_pid.entry(p).or_default().0.push(r);
    }
    for &(p, r) in reduced {
        by_pid.entry(p).or_default().1.push(r);
    }
    let mut pids: Vec<_> = by_pid.keys().copied().collect();
    pids.sort_unstable();
    for p in pids {
        let (a, b) = &by_pid[&p];
        if b.len() < a.len() || b.len() > a.len() + 1 || b[..a.len()] != a[..] {
            return Some(format!("process {p}: expanded results {a:?}, reduced {b:?}"));
        }
    }
    None
}

/// The parameters that make the CAS queue blow-up observable at desk
/// horizons: tiny counter modulus, small back-on constant, large p0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stress {
    pub modulus: u64,
    pub c: u32,
    pub cas_p0_exponent: f64,
}

impl Default for Stress {
    fn default() -> Self {
        Stress { modulus: 4, c: 2, cas_p0_exponent: 1.0 }
    }
}

impl Stress {
    pub fn apply(&self, cfg: &SimConfig) -> SimConfig {
        SimConfig {
            fingerprint_modulus: Some(self.modulus),
            c: self.c,
            cas_p0_exponent: self.cas_p0_exponent,
            ..cfg.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoMode {
    Basic,
    Improved,
}

impl DemoMode {
    pub fn primitive(self) -> PrimitiveKind {
        match self {
            DemoMode::Basic => PrimitiveKind::BasicCas,
            DemoMode::Improved => PrimitiveKind::ImprovedCas,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DemoMode::Basic => "basic",
            DemoMode::Improved => "improved",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(DemoMode::Basic),
            "improved" => Ok(DemoMode::Improved),
            _ => Err(SimError::config(format!("unknown failure-demo mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureReport {
    pub mode: DemoMode,
    pub seed: u64,
    pub processes: u32,
    pub steps: u64,
    pub max_queue_c: usize,
    /// First time the queue of C reached ceil(P/2).
    pub first_blowup: Option<u64>,
    pub mean_latency: f64,
    pub completed: u64,
}

/// Runs the CAS flood against one CAS primitive. With `stop_at_blowup` the
/// run ends at the first blow-up.
pub fn failure_demo(
    cfg: &SimConfig,
    mode: DemoMode,
    scheduler_id: &str,
    horizon: u64,
    stop_at_blowup: bool,
) -> Result<FailureReport> {
    let prim = mode.primitive();
    let world = World::for_primitive(cfg, prim, EngineOptions::default())?;
    let c_cell = world.object.primitive().cell as usize;
    let threshold = (cfg.processes as usize).div_ceil(2).max(1);
    let sched = Scheduler::from_id(scheduler_id, cfg.seed, cfg.processes, cfg.tau, false)?;
    let wl = Workload::from_id("cas-flood", cfg.processes, ObjectKind::CasRegister, cfg.seed, cfg.value_mask())?;
    let mut sim = Sim::new(world, sched, wl);
    let mut max_queue_c = 0;
    let mut first_blowup = None;
    let mut completed = 0u64;
    let mut latency_sum = 0u128;
    while sim.world.t() < horizon {
        let t = sim.world.t();
        sim.step()?;
        for c in sim.world.completions() {
            completed += 1;
            latency_sum += c.latency() as u128;
        }
        // Peak queue length during step t: what remains plus the record
        // applied in this step.
        let applied = sim.world.summary().applies.iter().any(|a| a.cell as usize == c_cell);
        let q = sim.world.mem.queue_len(c_cell as u32) + applied as usize;
        max_queue_c = max_queue_c.max(q);
        if q >= threshold && first_blowup.is_none() {
            first_blowup = Some(t);
            if stop_at_blowup {
                break;
            }
        }
    }
    Ok(FailureReport {
        mode,
        seed: cfg.seed,
        processes: cfg.processes,
        steps: sim.world.t(),
        max_queue_c,
        first_blowup,
        mean_latency: if completed == 0 { 0.0 } else { latency_sum as f64 / completed as f64 },
        completed,
    })
}

/// One trial of the decoupled game.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameTrial {
    pub seed: u64,
    /// First state-changing invocation time of each process run alone.
    pub t_i: Vec<Option<u64>>,
    pub t_star: Option<u64>,
    pub loss: u64,
    /// First state-changing time and loss in the joint execution.
    pub joint_t_star: Option<u64>,
    pub joint_loss: u64,
}

impl GameTrial {
    pub fn coupled(&self) -> bool {
        self.t_star == self.joint_t_star && self.loss == self.joint_loss
    }
}

#[derive(Debug, Clone)]
pub struct DecoupledGameReport {
    pub processes: u32,
    pub primitive: PrimitiveKind,
    pub trials: Vec<GameTrial>,
    /// p_t(i) for t in 0..=t_max: fraction of trials with T_i < t.
    pub p_i: Vec<Vec<f64>>,
    /// p_t(S) = sum over i of p_t(i).
    pub p_s: Vec<f64>,
}

impl DecoupledGameReport {
    pub fn coupling_failures(&self) -> usize {
        self.trials.iter().filter(|t| !t.coupled()).count()
    }

    /// Fraction of trials with loss at most `bound`.
    pub fn loss_at_most(&self, bound: f64) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().filter(|t| t.loss as f64 <= bound).count() as f64 / self.trials.len() as f64
    }

    /// Times t where p_t(S) <= 1/2 but p_{t+1}(S) >= `jump`.
    pub fn large_jumps(&self, jump: f64) -> Vec<u64> {
        self.p_s
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] <= 0.5 && w[1] >= jump)
            .map(|(t, _)| t as u64)
            .collect()
    }
}

fn game_world(cfg: &SimConfig, prim: PrimitiveKind) -> Result<World> {
    World::new(cfg, ObjectKind::MaxRegister, &Binding::single(prim), EngineOptions::default())
}

/// First state-changing invocation time of `pid` running Set alone.
fn singleton(cfg: &SimConfig, prim: PrimitiveKind, pid: Pid, horizon: u64) -> Result<Option<u64>> {
    let mut world = game_world(cfg, prim)?;
    world.invoke(pid, OpSpec::Set)?;
    while world.t() < horizon {
        if world.is_free(pid) {
            return Err(SimError::contract(
                world.t(),
                format!("Set by process {pid} returned without a state-changing instruction; a later Read would return 0"),
            ));
        }
        let t = world.t();
        world.step(&[pid])?;
        if !world.summary().enqueued.is_empty() {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// First step with a state-changing invocation in the joint one-shot Set
/// execution under the greedy scheduler, and how many processes issued one.
fn joint(cfg: &SimConfig, prim: PrimitiveKind, horizon: u64) -> Result<(Option<u64>, u64)> {
    let mut world = game_world(cfg, prim)?;
    for p in 0..cfg.processes {
        world.invoke(p, OpSpec::Set)?;
    }
    let mut sched = Scheduler::greedy(cfg.seed, cfg.processes, cfg.tau, false);
    let mut out = Vec::new();
    while world.t() < horizon {
        let t = world.t();
        sched.select(&world, &mut out)?;
        world.step(&out)?;
        let n = world.summary().enqueued.len() as u64;
        if n > 0 {
            return Ok((Some(t), n));
        }
    }
    Ok((None, 0))
}

/// Plays the decoupled game for one-shot Set on every process, `trials`
/// times with seeds `base_seed + k`.
pub fn decoupled_game(cfg: &SimConfig, prim: PrimitiveKind, trials: u64, base_seed: u64, horizon: u64) -> Result<DecoupledGameReport> {
    use rayon::prelude::*;
    let p = cfg.processes;
    let results: Vec<Result<GameTrial>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed + k;
            let c = cfg.clone().with_seed(seed);
            let t_i = (0..p).map(|pid| singleton(&c, prim, pid, horizon)).collect::<Result<Vec<_>>>()?;
            let t_star = t_i.iter().flatten().min().copied();
            let loss = t_i.iter().filter(|&&t| t.is_some() && t == t_star).count() as u64;
            let (joint_t_star, joint_loss) = joint(&c, prim, horizon)?;
            Ok(GameTrial { seed, t_i, t_star, loss, joint_t_star, joint_loss })
        })
        .collect();
    let trials_v = results.into_iter().collect::<Result<Vec<_>>>()?;
    let t_max = trials_v.iter().flat_map(|t| t.t_i.iter().flatten()).max().copied().unwrap_or(0) + 1;
    let n = trials_v.len().max(1) as f64;
    let mut p_i = vec![vec![0.0; t_max as usize + 1]; p as usize];
    for trial in &trials_v {
        for (i, ti) in trial.t_i.iter().enumerate() {
            if let Some(ti) = *ti {
                for slot in p_i[i].iter_mut().skip(ti as usize + 1) {
                    *slot += 1.0 / n;
                }
            }
        }
    }
    let p_s = (0..=t_max as usize).map(|t| p_i.iter().map(|v| v[t]).sum()).collect();
    Ok(DecoupledGameReport { processes: p, primitive: prim, trials: trials_v, p_i, p_s })
}

/// Measured hp-latency of one-shot all-write on `prim` under the greedy
/// scheduler, pooled over `seeds`.
pub fn measure_hp_latency(cfg: &SimConfig, prim: PrimitiveKind, seeds: std::ops::Range<u64>, horizon: u64) -> Result<Option<u64>> {
    let mut maxima = Vec::new();
    for seed in seeds {
        let c = cfg.clone().with_seed(seed);
        let world = World::for_primitive(&c, prim, EngineOptions::default())?;
        let m = Metrics::new(&world, false, false);
        let wl = Workload::from_id("one-shot-write", c.processes, world.object.kind, seed, c.value_mask())?;
        let mut sim = Sim::new(world, Scheduler::greedy(seed, c.processes, c.tau, false), wl).with_metrics(m);
        sim.run(horizon)?;
        let m = sim.metrics.as_mut().expect("metrics attached");
        m.finish(&sim.world);
        maxima.extend(m.latency.per_time_max());
    }
    Ok(hp_latency(&mut maxima, cfg.processes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_set_loses_everyone_at_time_zero() {
        let cfg = SimConfig::default().with_processes(8);
        let r = decoupled_game(&cfg, PrimitiveKind::NaiveRegister, 3, 0, 100).unwrap();
        for t in &r.trials {
            assert!(t.t_i.iter().all(|&x| x == Some(0)));
            assert_eq!(t.loss, 8);
            assert!(t.coupled());
        }
    }

    #[test]
    fn stress_sets_the_three_parameters() {
        let c = Stress::default().apply(&SimConfig::default());
        assert_eq!(c.fingerprint_modulus, Some(4));
        assert_eq!(c.c, 2);
        assert_eq!(c.cas_p0_exponent, 1.0);
    }
}
