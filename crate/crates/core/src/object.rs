//! Simulated objects: a kind plus primitive instances bound to its slots.
//!
//! Plain registers and CAS registers run one primitive operation per
//! high-level operation. The composed objects (a CAS-loop counter and a
//! one-bit max register) run a small program whose steps are primitive
//! operations, each recorded as a sub-operation with its own id.

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::history::{Event, EventKind};
use crate::memory::{Label, Memory};
use crate::ops::{OpResult, OpSpec};
use crate::primitives::{Fault, PrimMachine, PrimOp, Primitive, PrimitiveKind, Probe, Transition};
use crate::rng::Tape;
use crate::{OpId, Pid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    /// Read/Write register.
    Register,
    /// Read/Cas register.
    CasRegister,
    /// FetchInc via a Read + Cas retry loop on one CAS slot.
    Counter,
    /// One-bit max register: Set writes 1 to a register slot.
    MaxRegister,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Register => "register",
            ObjectKind::CasRegister => "cas-register",
            ObjectKind::Counter => "counter",
            ObjectKind::MaxRegister => "max-register",
        }
    }

    /// The object kind a primitive backs directly.
    pub fn for_primitive(kind: PrimitiveKind) -> Self {
        if kind.is_cas() {
            ObjectKind::CasRegister
        } else {
            ObjectKind::Register
        }
    }

    fn needs_cas_slot(self) -> bool {
        matches!(self, ObjectKind::CasRegister | ObjectKind::Counter)
    }

    pub fn supports(self, spec: &OpSpec) -> bool {
        matches!(
            (self, spec),
            (_, OpSpec::Read)
                | (ObjectKind::Register, OpSpec::Write(_))
                | (ObjectKind::CasRegister, OpSpec::Cas { .. })
                | (ObjectKind::Counter, OpSpec::FetchInc)
                | (ObjectKind::MaxRegister, OpSpec::Set)
        )
    }
}

/// Abstract slot to implementation mapping. All stock objects use one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub slots: Vec<PrimitiveKind>,
}

impl Binding {
    pub fn single(kind: PrimitiveKind) -> Self {
        Binding { slots: vec![kind] }
    }

    pub fn check(&self, object: ObjectKind) -> Result<()> {
        if self.slots.len() != 1 {
            return Err(SimError::Binding(format!(
                "{} has 1 slot but {} were bound",
                object.as_str(),
                self.slots.len()
            )));
        }
        let k = self.slots[0];
        if k.is_cas() != object.needs_cas_slot() {
            let want = if object.needs_cas_slot() { "a CAS" } else { "a read/write" };
            return Err(SimError::Binding(format!("{} needs {want} slot, got {}", object.as_str(), k.as_str())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Object {
    pub kind: ObjectKind,
    pub slots: Vec<Primitive>,
}

impl Object {
    pub fn install(
        kind: ObjectKind,
        binding: &Binding,
        cfg: &SimConfig,
        mem: &mut Memory,
        init_tape: &mut Tape,
        fault: Option<Fault>,
    ) -> Result<Self> {
        binding.check(kind)?;
        let mut slots = Vec::with_capacity(binding.slots.len());
        for &k in &binding.slots {
            slots.push(Primitive::install(k, cfg, mem, init_tape)?.with_fault(fault));
        }
        Ok(Object { kind, slots })
    }

    pub fn primitive(&self) -> &Primitive {
        &self.slots[0]
    }

    /// Initial state of a high-level operation. Sub-operation invoke events
    /// are pushed to `sink`.
    pub fn start(&self, spec: OpSpec, sink: &mut SubOpSink<'_>) -> Result<OpMachine> {
        if !self.kind.supports(&spec) {
            return Err(SimError::config(format!("{} does not support {spec}", self.kind.as_str())));
        }
        let p = &self.slots[0];
        let (program, first) = match (self.kind, spec) {
            (_, OpSpec::Read) => (Program::Direct, PrimOp::Read),
            (_, OpSpec::Write(x)) => (Program::Direct, PrimOp::Write(x)),
            (_, OpSpec::Cas { expected, new }) => (Program::Direct, PrimOp::Cas(expected, new)),
            (_, OpSpec::FetchInc) => (Program::FetchIncRead, PrimOp::Read),
            (_, OpSpec::Set) => (Program::SetWrite, PrimOp::Write(1)),
        };
        let sub = p.start(first)?;
        let sub_op = if program == Program::Direct { None } else { Some(sink.open(first, sink.t_invoke)) };
        Ok(OpMachine { spec, program, sub, sub_op, x: 0 })
    }
}

fn op_spec(op: PrimOp) -> OpSpec {
    match op {
        PrimOp::Read => OpSpec::Read,
        PrimOp::Write(x) => OpSpec::Write(x),
        PrimOp::Cas(e, n) => OpSpec::Cas { expected: e, new: n },
    }
}

/// Allocates sub-operation ids and records their invoke/return events.
pub struct SubOpSink<'a> {
    pub pid: Pid,
    pub parent: OpId,
    /// Time at which the top-level operation is being invoked.
    pub t_invoke: u64,
    pub next_op: &'a mut OpId,
    pub events: Option<&'a mut Vec<Event>>,
}

impl SubOpSink<'_> {
    fn open(&mut self, op: PrimOp, t: u64) -> OpId {
        let id = *self.next_op;
        *self.next_op += 1;
        if let Some(ev) = self.events.as_deref_mut() {
            ev.push(Event {
                t,
                pid: self.pid,
                op: id,
                kind: EventKind::OpInvoke { spec: op_spec(op), parent: Some(self.parent) },
            });
        }
        id
    }

    fn close(&mut self, id: OpId, result: OpResult, t: u64) {
        if let Some(ev) = self.events.as_deref_mut() {
            ev.push(Event { t, pid: self.pid, op: id, kind: EventKind::OpReturn { result, parent: Some(self.parent) } });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Program {
    /// The operation is a single primitive operation.
    Direct,
    FetchIncRead,
    FetchIncCas,
    SetWrite,
}

/// State of one ongoing high-level operation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpMachine {
    pub spec: OpSpec,
    pub program: Program,
    pub sub: PrimMachine,
    pub sub_op: Option<OpId>,
    /// Last value read by a composed program.
    pub x: u64,
}

impl OpMachine {
    pub fn instr(&self, obj: &Object) -> (crate::memory::Instr, Label) {
        self.sub.instr(&obj.slots[0])
    }

    pub fn probe(&self, obj: &Object) -> Probe {
        self.sub.probe(&obj.slots[0])
    }

    /// Advances after the pending instruction applied at time `t` returned
    /// `ret`. Sub-operation boundaries are stamped `t + 1`.
    pub fn on_applied(&mut self, ret: u64, obj: &Object, tape: &mut Tape, t: u64, sink: &mut SubOpSink<'_>) -> Transition {
        let p = &obj.slots[0];
        let r = match self.sub.on_applied(ret, p, tape) {
            Transition::Continue => return Transition::Continue,
            Transition::Done(r) => r,
        };
        if let Some(id) = self.sub_op.take() {
            sink.close(id, r, t + 1);
        }
        let next = match (self.program, r) {
            (Program::Direct, r) => return Transition::Done(r),
            (Program::SetWrite, _) => return Transition::Done(OpResult::Unit),
            (Program::FetchIncRead, OpResult::Value(x)) => {
                self.x = x;
                self.program = Program::FetchIncCas;
                PrimOp::Cas(x, x.wrapping_add(1) & p.value_mask)
            }
            (Program::FetchIncCas, OpResult::Bool(true)) => return Transition::Done(OpResult::Value(self.x)),
            (Program::FetchIncCas, OpResult::Bool(false)) => {
                self.program = Program::FetchIncRead;
                PrimOp::Read
            }
            (prog, r) => unreachable!("program {prog:?} got result {r:?}"),
        };
        self.sub = p.start(next).expect("operands masked to value width");
        self.sub_op = Some(sink.open(next, t + 1));
        Transition::Continue
    }
}
