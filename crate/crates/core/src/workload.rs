//! Adaptive users: policies deciding invocations from observed responses.
//!
//! A workload sees only [`Observation`]s: the current time, the operations
//! that returned since its last call (with their timings and results) and
//! the set of free processes. It never sees memory, queues or tapes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::Completion;
use crate::error::{Result, SimError};
use crate::object::ObjectKind;
use crate::ops::{OpResult, OpSpec};
use crate::rng;
use crate::Pid;

#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub t: u64,
    pub completed: &'a [Completion],
    pub free: &'a [Pid],
}

#[derive(Debug, Clone)]
pub enum Workload {
    OneShot(OneShot),
    CasFlood(CasFlood),
    PoissonMix(Box<PoissonMix>),
    Replay(ReplayWorkload),
}

impl Workload {
    /// Builds a workload from its id.
    ///
    /// Ids: `one-shot-write` (Write(i) on every process), `one-shot-read`,
    /// `one-shot-cas` (Cas(0 -> 1) on every process), `one-shot-set`,
    /// `one-shot-fetch-inc`, `cas-flood`, `cas-flood:continuous`,
    /// `poisson:<read_frac>:<rate>`.
    pub fn from_id(id: &str, processes: u32, object: ObjectKind, seed: u64, value_mask: u64) -> Result<Self> {
        let all = |f: &dyn Fn(Pid) -> OpSpec| -> Result<Workload> {
            Ok(Workload::OneShot(OneShot::new((0..processes).map(|p| (p, f(p))).collect())?))
        };
        let mut parts = id.split(':');
        let head = parts.next().unwrap_or("");
        let probe = match head {
            "one-shot-write" => Some(OpSpec::Write(0)),
            "one-shot-cas" | "cas-flood" => Some(OpSpec::Cas { expected: 0, new: 0 }),
            "one-shot-set" => Some(OpSpec::Set),
            "one-shot-fetch-inc" => Some(OpSpec::FetchInc),
            _ => None,
        };
        if let Some(spec) = probe.filter(|s| !object.supports(s)) {
            return Err(SimError::config(format!("workload '{id}' issues {spec}, which {} does not support", object.as_str())));
        }
        let w = match head {
            "one-shot-write" => all(&|p| OpSpec::Write((p as u64 + 1) & value_mask))?,
            "one-shot-read" => all(&|_| OpSpec::Read)?,
            "one-shot-cas" => all(&|_| OpSpec::Cas { expected: 0, new: 1 })?,
            "one-shot-set" => all(&|_| OpSpec::Set)?,
            "one-shot-fetch-inc" => all(&|_| OpSpec::FetchInc)?,
            "cas-flood" => {
                let continuous = match parts.next() {
                    None => false,
                    Some("continuous") => true,
                    Some(v) => return Err(SimError::config(format!("unknown cas-flood variant '{v}'"))),
                };
                Workload::CasFlood(CasFlood::new(value_mask, continuous))
            }
            "poisson" => {
                let mut num = |name: &str| -> Result<f64> {
                    parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| SimError::config(format!("workload '{id}': missing or bad {name}")))
                };
                let read_frac = num("read fraction")?;
                let rate = num("rate")?;
                Workload::PoissonMix(Box::new(PoissonMix::new(read_frac, rate, object, seed, value_mask)?))
            }
            _ => return Err(SimError::config(format!("unknown workload '{id}'"))),
        };
        if parts.next().is_some() {
            return Err(SimError::config(format!("workload '{id}': too many parameters")));
        }
        Ok(w)
    }

    /// Invocations to make at `obs.t`, appended to `out`.
    pub fn decide(&mut self, obs: &Observation<'_>, out: &mut Vec<(Pid, OpSpec)>) {
        out.clear();
        match self {
            Workload::OneShot(w) => w.decide(obs, out),
            Workload::CasFlood(w) => w.decide(obs, out),
            Workload::PoissonMix(w) => w.decide(obs, out),
            Workload::Replay(w) => w.decide(obs, out),
        }
    }

    /// True once the workload will never invoke again.
    pub fn exhausted(&self, t: u64) -> bool {
        match self {
            Workload::OneShot(_) => t > 0,
            Workload::Replay(w) => w.next >= w.invocations.len(),
            _ => false,
        }
    }
}

/// Invokes a fixed list of operations at t = 0.
#[derive(Debug, Clone)]
pub struct OneShot {
    pub ops: Vec<(Pid, OpSpec)>,
}

impl OneShot {
    pub fn new(ops: Vec<(Pid, OpSpec)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(p, _) in &ops {
            if !seen.insert(p) {
                return Err(SimError::config(format!("one-shot workload lists process {p} twice")));
            }
        }
        Ok(OneShot { ops })
    }

    fn decide(&mut self, obs: &Observation<'_>, out: &mut Vec<(Pid, OpSpec)>) {
        if obs.t == 0 {
            out.extend_from_slice(&self.ops);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FloodPhase {
    Start,
    /// A Read is outstanding.
    Reading,
    /// A batch of Cas(x -> x+1) is outstanding.
    Batch,
}

/// The CAS flood: Read the value x, then Cas(x -> x + 1) on every free
/// process; Read again once the first Cas of the batch returns.
///
/// In the continuous variant every process loops Read, Cas independently.
#[derive(Debug, Clone)]
pub struct CasFlood {
    pub value_mask: u64,
    pub continuous: bool,
    phase: FloodPhase,
    reader: Pid,
    /// Continuous variant: value each process last read.
    last_read: Vec<Option<u64>>,
}

impl CasFlood {
    pub fn new(value_mask: u64, continuous: bool) -> Self {
        CasFlood { value_mask, continuous, phase: FloodPhase::Start, reader: 0, last_read: Vec::new() }
    }

    fn decide(&mut self, obs: &Observation<'_>, out: &mut Vec<(Pid, OpSpec)>) {
        if self.continuous {
            for c in obs.completed {
                let idx = c.pid as usize;
                if self.last_read.len() <= idx {
                    self.last_read.resize(idx + 1, None);
                }
                self.last_read[idx] = match (c.spec, c.result) {
                    (OpSpec::Read, OpResult::Value(x)) => Some(x),
                    _ => None,
                };
            }
            for &p in obs.free {
                let idx = p as usize;
                match self.last_read.get(idx).copied().flatten() {
                    Some(x) => out.push((p, OpSpec::Cas { expected: x, new: x.wrapping_add(1) & self.value_mask })),
                    None => out.push((p, OpSpec::Read)),
                }
            }
            return;
        }
        let mut read_value = None;
        let mut batch_returned = false;
        for c in obs.completed {
            match (c.spec, c.result) {
                (OpSpec::Read, OpResult::Value(x)) if self.phase == FloodPhase::Reading && c.pid == self.reader => {
                    read_value = Some(x)
                }
                (OpSpec::Cas { .. }, _) => batch_returned = true,
                _ => {}
            }
        }
        let start_read = match self.phase {
            FloodPhase::Start => true,
            FloodPhase::Batch => batch_returned,
            FloodPhase::Reading => false,
        };
        if let Some(x) = read_value {
            let new = x.wrapping_add(1) & self.value_mask;
            out.extend(obs.free.iter().map(|&p| (p, OpSpec::Cas { expected: x, new })));
            self.phase = FloodPhase::Batch;
        } else if start_read {
            if let Some(&p) = obs.free.first() {
                out.push((p, OpSpec::Read));
                self.reader = p;
                self.phase = FloodPhase::Reading;
            }
        }
    }
}

/// Each free process, independently each step with probability
/// `min(rate, 1)`, invokes a Read (with probability `read_frac`) or an update
/// with a random operand.
#[derive(Debug, Clone)]
pub struct PoissonMix {
    pub read_frac: f64,
    pub rate: f64,
    pub object: ObjectKind,
    pub value_mask: u64,
    rng: ChaCha8Rng,
    last_seen: u64,
}

impl PoissonMix {
    pub fn new(read_frac: f64, rate: f64, object: ObjectKind, seed: u64, value_mask: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&read_frac) {
            return Err(SimError::config("read fraction must lie in [0, 1]"));
        }
        if rate.is_nan() || rate < 0.0 {
            return Err(SimError::config("rate must be nonnegative"));
        }
        Ok(PoissonMix { read_frac, rate, object, value_mask, rng: rng::stream(seed, "workload", 0), last_seen: 0 })
    }

    fn decide(&mut self, obs: &Observation<'_>, out: &mut Vec<(Pid, OpSpec)>) {
        for c in obs.completed {
            if let (OpSpec::Read, OpResult::Value(x)) = (c.spec, c.result) {
                self.last_seen = x;
            }
        }
        let rate = self.rate.min(1.0);
        if rate <= 0.0 {
            return;
        }
        let operand_max = self.value_mask.min(7);
        for &p in obs.free {
            if !self.rng.gen_bool(rate) {
                continue;
            }
            let spec = if self.rng.gen_bool(self.read_frac) {
                OpSpec::Read
            } else {
                match self.object {
                    ObjectKind::Register => OpSpec::Write(self.rng.gen_range(0..=operand_max)),
                    ObjectKind::CasRegister => OpSpec::Cas { expected: self.last_seen, new: self.rng.gen_range(0..=operand_max) },
                    ObjectKind::Counter => OpSpec::FetchInc,
                    ObjectKind::MaxRegister => OpSpec::Set,
                }
            };
            out.push((p, spec));
        }
    }
}

/// Replays recorded invocations `(t, pid, spec)` sorted by time.
#[derive(Debug, Clone)]
pub struct ReplayWorkload {
    pub invocations: Vec<(u64, Pid, OpSpec)>,
    next: usize,
}

impl ReplayWorkload {
    pub fn new(mut invocations: Vec<(u64, Pid, OpSpec)>) -> Self {
        invocations.sort_by_key(|&(t, p, _)| (t, p));
        ReplayWorkload { invocations, next: 0 }
    }

    fn decide(&mut self, obs: &Observation<'_>, out: &mut Vec<(Pid, OpSpec)>) {
        while let Some(&(t, p, s)) = self.invocations.get(self.next) {
            if t > obs.t {
                break;
            }
            out.push((p, s));
            self.next += 1;
        }
    }
}
