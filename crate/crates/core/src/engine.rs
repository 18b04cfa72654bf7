//! The timestep engine.
//!
//! One call to [`World::step`] executes timestep `t`:
//! scheduled processes invoke their pending instruction in the given order;
//! Loads, Nops and local steps take effect at once against the memory as of
//! the start of the step; state-changing instructions are appended to their
//! cell's queue in that same order; finally every cell with a nonempty queue
//! dequeues and applies its head record. A process whose record is applied at
//! `t` can be scheduled again from `t + 1`; an operation whose last
//! instruction applies at `t` returns at `t + 1`.
//!
//! New operations are invoked with [`World::invoke`] before the step that
//! should see them ready.

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::history::{Event, EventKind, History};
use crate::memory::{self, CellId, Instr, InstrKind, Label, Memory, QueuedRecord, Word};
use crate::object::{Binding, Object, ObjectKind, OpMachine, SubOpSink};
use crate::ops::{OpResult, OpSpec};
use crate::primitives::{Fault, Probe, Transition};
use crate::rng::Tape;
use crate::{OpId, Pid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EngineOptions {
    /// Keep the full event history.
    pub keep_history: bool,
    /// Run the online invariant monitor.
    pub monitor: bool,
    /// Issue the folded local instructions as explicit scheduled steps.
    pub expanded: bool,
    pub fault: Option<Fault>,
}

impl EngineOptions {
    pub fn full() -> Self {
        EngineOptions { keep_history: true, monitor: true, ..Default::default() }
    }
}

/// One ongoing top-level operation.
#[derive(Debug, Clone)]
pub struct Ongoing {
    pub id: OpId,
    pub spec: OpSpec,
    pub invoked_at: u64,
    pub machine: OpMachine,
    /// Scheduled steps taken so far.
    pub steps: u64,
    /// Time and C-cell version of the last S apply.
    pub s_time: Option<u64>,
    pub s_version: Option<u64>,
    /// Expanded mode: local steps still owed before the next instruction.
    pub locals_left: u32,
    /// Expanded mode: a return value whose transition waits for the locals.
    pub deferred: Option<(u64, Label)>,
}

#[derive(Debug, Clone)]
pub struct ProcState {
    pub op: Option<Ongoing>,
    /// Has a record in some queue.
    pub waiting: bool,
    tape: Tape,
    sample_tape: Tape,
}

/// A top-level operation that finished during the last step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub pid: Pid,
    pub op: OpId,
    pub spec: OpSpec,
    pub result: OpResult,
    pub invoked_at: u64,
    pub returned_at: u64,
}

impl Completion {
    pub fn latency(&self) -> u64 {
        self.returned_at - self.invoked_at
    }
}

/// A queued record applied during the last step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellApply {
    pub cell: CellId,
    pub pid: Pid,
    pub op: OpId,
    pub kind: InstrKind,
    pub label: Label,
    /// Cas success flag (true for stores).
    pub success: bool,
    pub changed: bool,
}

/// What happened in the last step, for online metrics.
#[derive(Debug, Clone, Default)]
pub struct StepSummary {
    pub t: u64,
    pub scheduled: usize,
    pub applies: Vec<CellApply>,
    /// Operations that moved to a W' StoreRandom this step.
    pub w_prime_entries: u32,
    /// Queue lengths at the start of the step, before enqueues.
    pub queue_at_start: Vec<usize>,
    /// Processes that invoked a state-changing instruction this step.
    pub enqueued: Vec<Pid>,
}

pub struct World {
    pub cfg: SimConfig,
    pub opts: EngineOptions,
    pub mem: Memory,
    pub object: Object,
    procs: Vec<ProcState>,
    t: u64,
    next_op: OpId,
    history: Option<History>,
    late: Vec<Event>,
    completions: Vec<Completion>,
    summary: StepSummary,
    pre_values: Vec<Word>,
    last_ticket: Vec<Option<u64>>,
    in_flight: usize,
}

impl World {
    pub fn new(cfg: &SimConfig, kind: ObjectKind, binding: &Binding, opts: EngineOptions) -> Result<Self> {
        cfg.validate()?;
        let mut mem = Memory::new(cfg.word_bits);
        let mut init_tape = Tape::new(cfg.seed, "init", 0);
        let object = Object::install(kind, binding, cfg, &mut mem, &mut init_tape, opts.fault)?;
        let procs = (0..cfg.processes)
            .map(|p| ProcState {
                op: None,
                waiting: false,
                tape: Tape::new(cfg.seed, "tape", p as u64),
                sample_tape: Tape::new(cfg.seed, "sample", p as u64),
            })
            .collect();
        let n = mem.cells.len();
        Ok(World {
            cfg: cfg.clone(),
            opts,
            mem,
            object,
            procs,
            t: 0,
            next_op: 0,
            history: opts.keep_history.then(History::new),
            late: Vec::new(),
            completions: Vec::new(),
            summary: StepSummary { queue_at_start: vec![0; n], ..Default::default() },
            pre_values: vec![Word(0); n],
            last_ticket: vec![None; n],
            in_flight: 0,
        })
    }

    /// A world whose single object is backed directly by `prim`.
    pub fn for_primitive(cfg: &SimConfig, prim: crate::primitives::PrimitiveKind, opts: EngineOptions) -> Result<Self> {
        World::new(cfg, ObjectKind::for_primitive(prim), &Binding::single(prim), opts)
    }

    /// Replaces the StoreRandom sample tape of `pid` with one from `seed`.
    pub fn reseed_samples(&mut self, pid: Pid, seed: u64) {
        self.procs[pid as usize].sample_tape = Tape::new(seed, "sample", pid as u64);
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn processes(&self) -> u32 {
        self.procs.len() as u32
    }

    pub fn proc(&self, pid: Pid) -> &ProcState {
        &self.procs[pid as usize]
    }

    pub fn procs(&self) -> &[ProcState] {
        &self.procs
    }

    pub fn history(&self) -> Option<&History> {
        self.history.as_ref()
    }

    pub fn take_history(&mut self) -> Option<History> {
        self.history.take()
    }

    /// Top-level operations that finished in the last step.
    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    pub fn summary(&self) -> &StepSummary {
        &self.summary
    }

    pub fn is_free(&self, pid: Pid) -> bool {
        self.procs[pid as usize].op.is_none()
    }

    pub fn is_ready(&self, pid: Pid) -> bool {
        let p = &self.procs[pid as usize];
        p.op.is_some() && !p.waiting
    }

    pub fn ready_into(&self, out: &mut Vec<Pid>) {
        out.clear();
        out.extend((0..self.procs.len() as Pid).filter(|&p| self.is_ready(p)));
    }

    pub fn free_into(&self, out: &mut Vec<Pid>) {
        out.clear();
        out.extend((0..self.procs.len() as Pid).filter(|&p| self.is_free(p)));
    }

    /// Number of ongoing top-level operations.
    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    /// No ongoing operation and no queued record.
    pub fn quiescent(&self) -> bool {
        self.in_flight == 0 && self.mem.cells.iter().all(|c| c.queue.is_empty())
    }

    /// Kind of the instruction `pid` would invoke next, if any.
    pub fn pending_kind(&self, pid: Pid) -> Option<InstrKind> {
        let p = &self.procs[pid as usize];
        let op = p.op.as_ref()?;
        if op.locals_left > 0 {
            return Some(InstrKind::Local);
        }
        Some(op.machine.instr(&self.object).0.kind())
    }

    pub fn probe(&self, pid: Pid) -> Option<Probe> {
        let op = self.procs[pid as usize].op.as_ref()?;
        Some(op.machine.probe(&self.object))
    }

    fn push_event(history: &mut Option<History>, t: u64, pid: Pid, op: OpId, kind: EventKind) {
        if let Some(h) = history.as_mut() {
            h.push(Event { t, pid, op, kind });
        }
    }

    /// Invokes a top-level operation on a free process at the current time.
    pub fn invoke(&mut self, pid: Pid, spec: OpSpec) -> Result<OpId> {
        let t = self.t;
        let proc = self.procs.get_mut(pid as usize).ok_or_else(|| SimError::config(format!("no process {pid}")))?;
        if proc.op.is_some() {
            return Err(SimError::ProcessBusy { pid, t });
        }
        if !self.object.kind.supports(&spec) {
            return Err(SimError::config(format!("{} does not support {spec}", self.object.kind.as_str())));
        }
        let id = self.next_op;
        self.next_op += 1;
        if let Some(h) = self.history.as_mut() {
            h.push(Event { t, pid, op: id, kind: EventKind::OpInvoke { spec, parent: None } });
        }
        let mut sink = SubOpSink {
            pid,
            parent: id,
            t_invoke: t,
            next_op: &mut self.next_op,
            events: self.history.as_mut().map(|h| &mut h.events),
        };
        let machine = self.object.start(spec, &mut sink)?;
        let locals_left = if self.opts.expanded { self.object.primitive().folded_locals(None) } else { 0 };
        proc.op = Some(Ongoing {
            id,
            spec,
            invoked_at: t,
            machine,
            steps: 0,
            s_time: None,
            s_version: None,
            locals_left,
            deferred: None,
        });
        self.in_flight += 1;
        Ok(id)
    }

    /// Executes timestep `t` with the given ordered schedule, then advances
    /// the clock.
    pub fn step(&mut self, scheduled: &[Pid]) -> Result<()> {
        let t = self.t;
        self.completions.clear();
        self.summary.t = t;
        self.summary.scheduled = scheduled.len();
        self.summary.applies.clear();
        self.summary.w_prime_entries = 0;
        self.summary.enqueued.clear();
        for (i, c) in self.mem.cells.iter().enumerate() {
            self.summary.queue_at_start[i] = c.queue.len();
            self.pre_values[i] = c.value;
        }

        for (i, &pid) in scheduled.iter().enumerate() {
            if !self.procs.get(pid as usize).is_some_and(|p| p.op.is_some() && !p.waiting) {
                return Err(SimError::contract(t, format!("process {pid} scheduled while not ready")));
            }
            if scheduled[..i].contains(&pid) {
                return Err(SimError::contract(t, format!("process {pid} scheduled twice")));
            }
        }

        for &pid in scheduled {
            self.invoke_instr(pid, t)?;
        }

        for ci in 0..self.mem.cells.len() {
            self.apply_head(ci as CellId, t)?;
        }

        if let Some(h) = self.history.as_mut() {
            h.events.append(&mut self.late);
        }
        self.t += 1;
        Ok(())
    }

    fn invoke_instr(&mut self, pid: Pid, t: u64) -> Result<()> {
        let proc = &mut self.procs[pid as usize];
        let op = proc.op.as_mut().expect("ready process has an operation");
        op.steps += 1;
        let op_id = op.id;
        if op.locals_left > 0 {
            op.locals_left -= 1;
            Self::push_event(&mut self.history, t, pid, op_id, EventKind::Invoke { instr: InstrKind::Local, label: Label::Local, cell: None });
            Self::push_event(
                &mut self.history,
                t,
                pid,
                op_id,
                EventKind::Apply { instr: InstrKind::Local, label: Label::Local, cell: None, ticket: None, returned: 0, post: None },
            );
            if op.locals_left == 0 {
                if let Some((ret, _)) = op.deferred.take() {
                    self.transition(pid, ret, t);
                }
            }
            return Ok(());
        }
        let (instr, label) = op.machine.instr(&self.object);
        let kind = instr.kind();
        let cell = instr.cell();
        Self::push_event(&mut self.history, t, pid, op_id, EventKind::Invoke { instr: kind, label, cell });
        match instr {
            Instr::Load { cell } => {
                let c = self.mem.cell(cell)?;
                let ret = c.value;
                if self.opts.monitor && ret != self.pre_values[cell as usize] {
                    return Err(SimError::contract(t, format!("load of cell {cell} saw a value written this step")));
                }
                if label == Label::S {
                    op.s_time = Some(t);
                    op.s_version = Some(c.version);
                }
                Self::push_event(
                    &mut self.history,
                    t,
                    pid,
                    op_id,
                    EventKind::Apply { instr: kind, label, cell: Some(cell), ticket: None, returned: ret.0, post: Some(ret) },
                );
                self.after_apply(pid, ret.0, label, t);
            }
            Instr::Nop | Instr::Local => {
                Self::push_event(
                    &mut self.history,
                    t,
                    pid,
                    op_id,
                    EventKind::Apply { instr: kind, label, cell: None, ticket: None, returned: 0, post: None },
                );
                self.after_apply(pid, 0, label, t);
            }
            Instr::Store { cell, .. } | Instr::Cas { cell, .. } | Instr::StoreRandom { cell, .. } => {
                if let Instr::StoreRandom { lo, hi, .. } = instr {
                    memory::check_interval(lo, hi, self.mem.word_bits)?;
                }
                let c = self.mem.cell_mut(cell)?;
                let ticket = c.next_ticket;
                c.next_ticket += 1;
                c.queue.push_back(QueuedRecord { pid, op: op_id, instr, label, invoked_at: t, ticket });
                let queue_len = c.queue.len() as u32;
                proc.waiting = true;
                self.summary.enqueued.push(pid);
                Self::push_event(&mut self.history, t, pid, op_id, EventKind::Enqueue { cell, ticket, queue_len });
            }
        }
        Ok(())
    }

    fn apply_head(&mut self, cell: CellId, t: u64) -> Result<()> {
        let word_bits = self.mem.word_bits;
        let c = &mut self.mem.cells[cell as usize];
        let Some(rec) = c.queue.pop_front() else {
            return Ok(());
        };
        if self.opts.monitor {
            let expect = self.last_ticket[cell as usize].map_or(0, |x| x + 1);
            if rec.ticket != expect {
                return Err(SimError::contract(t, format!("cell {cell} applied ticket {} out of order", rec.ticket)));
            }
            self.last_ticket[cell as usize] = Some(rec.ticket);
        }
        let before = c.value;
        let (ret, success) = match rec.instr {
            Instr::Store { value, .. } => {
                if value.0 > crate::config::mask(word_bits) {
                    return Err(SimError::config(format!("stored value {value} exceeds word width")));
                }
                if value != c.value {
                    c.version += 1;
                }
                c.value = value;
                (0, true)
            }
            Instr::Cas { expected, new, .. } => {
                let ok = memory::apply_cas(c, expected, new);
                (ok as u64, ok)
            }
            Instr::StoreRandom { lo, hi, .. } => {
                let tape = &mut self.procs[rec.pid as usize].sample_tape;
                let x = memory::apply_store_random(c, lo, hi, word_bits, tape)?;
                (x.0, true)
            }
            _ => unreachable!("only state-changing records are queued"),
        };
        let post = c.value;
        self.summary.applies.push(CellApply {
            cell,
            pid: rec.pid,
            op: rec.op,
            kind: rec.instr.kind(),
            label: rec.label,
            success,
            changed: post != before,
        });
        Self::push_event(
            &mut self.history,
            t,
            rec.pid,
            rec.op,
            EventKind::Apply {
                instr: rec.instr.kind(),
                label: rec.label,
                cell: Some(cell),
                ticket: Some(rec.ticket),
                returned: ret,
                post: Some(post),
            },
        );
        let proc = &mut self.procs[rec.pid as usize];
        if !proc.waiting {
            return Err(SimError::contract(t, format!("process {} had a queued record but was not waiting", rec.pid)));
        }
        proc.waiting = false;
        self.after_apply(rec.pid, ret, rec.label, t);
        Ok(())
    }

    fn after_apply(&mut self, pid: Pid, ret: u64, label: Label, t: u64) {
        if self.opts.expanded {
            let k = self.object.primitive().folded_locals(Some(label));
            if k > 0 {
                let op = self.procs[pid as usize].op.as_mut().expect("operation");
                op.locals_left = k;
                op.deferred = Some((ret, label));
                return;
            }
        }
        self.transition(pid, ret, t);
    }

    fn transition(&mut self, pid: Pid, ret: u64, t: u64) {
        let proc = &mut self.procs[pid as usize];
        let op = proc.op.as_mut().expect("operation");
        let mut sink = SubOpSink {
            pid,
            parent: op.id,
            t_invoke: t,
            next_op: &mut self.next_op,
            events: if self.history.is_some() { Some(&mut self.late) } else { None },
        };
        match op.machine.on_applied(ret, &self.object, &mut proc.tape, t, &mut sink) {
            Transition::Continue => {
                if op.machine.instr(&self.object).1 == Label::WPrime {
                    self.summary.w_prime_entries += 1;
                }
            }
            Transition::Done(result) => {
                let op = proc.op.take().expect("operation");
                self.in_flight -= 1;
                if self.history.is_some() {
                    self.late.push(Event { t: t + 1, pid, op: op.id, kind: EventKind::OpReturn { result, parent: None } });
                }
                self.completions.push(Completion {
                    pid,
                    op: op.id,
                    spec: op.spec,
                    result,
                    invoked_at: op.invoked_at,
                    returned_at: t + 1,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{PrimMachine, PrimitiveKind, Script};

    fn naive_world(p: u32) -> World {
        let cfg = SimConfig::default().with_processes(p);
        World::for_primitive(&cfg, PrimitiveKind::NaiveRegister, EngineOptions::full()).unwrap()
    }

    fn set_script(w: &mut World, pid: Pid, instrs: Vec<Instr>) {
        w.invoke(pid, OpSpec::Read).unwrap();
        let op = w.procs[pid as usize].op.as_mut().unwrap();
        op.machine.sub = PrimMachine::Script(Script::new(instrs));
    }

    #[test]
    fn two_stores_apply_in_enqueue_order() {
        let mut w = naive_world(2);
        set_script(&mut w, 0, vec![Instr::Store { cell: 0, value: Word(3) }]);
        set_script(&mut w, 1, vec![Instr::Store { cell: 0, value: Word(9) }]);
        w.step(&[0, 1]).unwrap();
        assert_eq!(w.mem.value(0).unwrap(), Word(3));
        w.step(&[]).unwrap();
        assert_eq!(w.mem.value(0).unwrap(), Word(9));
    }

    #[test]
    fn load_sees_pre_step_value() {
        let mut w = naive_world(2);
        set_script(&mut w, 0, vec![Instr::Store { cell: 0, value: Word(5) }]);
        w.step(&[0]).unwrap();
        assert_eq!(w.mem.value(0).unwrap(), Word(5));

        let mut w = naive_world(2);
        set_script(&mut w, 0, vec![Instr::Store { cell: 0, value: Word(5) }]);
        set_script(&mut w, 1, vec![Instr::Load { cell: 0 }]);
        w.step(&[0, 1]).unwrap();
        let c = w.completions().iter().find(|c| c.pid == 1).unwrap();
        assert_eq!(c.result, OpResult::Value(0));
    }

    #[test]
    fn empty_schedule_still_drains_one_record() {
        let mut w = naive_world(2);
        set_script(&mut w, 0, vec![Instr::Store { cell: 0, value: Word(1) }]);
        set_script(&mut w, 1, vec![Instr::Store { cell: 0, value: Word(2) }]);
        w.step(&[0, 1]).unwrap();
        assert_eq!(w.mem.queue_len(0), 1);
        w.step(&[]).unwrap();
        assert_eq!(w.mem.queue_len(0), 0);
    }

    #[test]
    fn scheduling_a_waiting_process_is_a_contract_violation() {
        let mut w = naive_world(2);
        set_script(&mut w, 0, vec![Instr::Store { cell: 0, value: Word(1) }, Instr::Load { cell: 0 }]);
        set_script(&mut w, 1, vec![Instr::Store { cell: 0, value: Word(2) }]);
        w.step(&[1, 0]).unwrap();
        assert!(matches!(w.step(&[0]), Err(SimError::ContractViolation { t: 1, .. })));
    }

    #[test]
    fn unknown_cell_is_reported() {
        let mut w = naive_world(1);
        set_script(&mut w, 0, vec![Instr::Load { cell: 7 }]);
        assert!(matches!(w.step(&[0]), Err(SimError::UnknownCell(7))));
    }

    #[test]
    fn busy_process_cannot_take_a_second_operation() {
        let mut w = naive_world(1);
        w.invoke(0, OpSpec::Read).unwrap();
        assert!(matches!(w.invoke(0, OpSpec::Read), Err(SimError::ProcessBusy { pid: 0, t: 0 })));
    }
}
