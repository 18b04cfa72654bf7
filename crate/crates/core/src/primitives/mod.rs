//! Contention-resolution primitives as reduced state machines.
//!
//! Each ongoing operation is pending on exactly one shared instruction (or a
//! Nop). When that instruction is applied, the local instructions that follow
//! it are folded into one transition that runs in the same timestep.

mod basic_cas;
mod improved_cas;
mod naive;
mod register;

pub use basic_cas::{BasicCas, BasicState};
pub use improved_cas::{ImprovedCas, ImprovedPhase};
pub use naive::{LoadRead, NaiveCas, NaiveWrite, Script};
pub use register::{RegisterWrite, WriteState};

use serde::{Deserialize, Serialize};

use crate::config::{mask, SimConfig};
use crate::error::{Result, SimError};
use crate::memory::{CellId, Instr, Label, Memory, Word};
use crate::ops::OpResult;
use crate::rng::Tape;

/// Which implementation backs a shared object slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveKind {
    NaiveRegister,
    BackOnRegister,
    NaiveCas,
    BasicCas,
    ImprovedCas,
}

impl PrimitiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::NaiveRegister => "naive-register",
            PrimitiveKind::BackOnRegister => "backon-register",
            PrimitiveKind::NaiveCas => "naive-cas",
            PrimitiveKind::BasicCas => "basic-cas",
            PrimitiveKind::ImprovedCas => "improved-cas",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "naive-register" => PrimitiveKind::NaiveRegister,
            "backon-register" | "register" => PrimitiveKind::BackOnRegister,
            "naive-cas" => PrimitiveKind::NaiveCas,
            "basic-cas" => PrimitiveKind::BasicCas,
            "improved-cas" => PrimitiveKind::ImprovedCas,
            _ => return Err(SimError::config(format!("unknown primitive '{s}'"))),
        })
    }

    /// Whether the slot offers Cas (as opposed to Write).
    pub fn is_cas(self) -> bool {
        matches!(self, PrimitiveKind::NaiveCas | PrimitiveKind::BasicCas | PrimitiveKind::ImprovedCas)
    }

    pub fn is_naive(self) -> bool {
        matches!(self, PrimitiveKind::NaiveRegister | PrimitiveKind::NaiveCas)
    }

    /// Number of shared cells the primitive occupies.
    pub fn cell_count(self) -> usize {
        match self {
            PrimitiveKind::ImprovedCas => 2,
            _ => 1,
        }
    }
}

/// Deliberate bugs used to show the checkers catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Invocation probability triples per loop iteration instead of the
    /// algorithm's factor.
    TripleGrowth,
    /// The probability update is folded before the coin instead of after it,
    /// shifting every back-on draw by one iteration.
    MisfoldedUpdate,
}

/// Back-on invocation probability, kept as a base-2 logarithm.
///
/// After `k` unsuccessful loop iterations the probability is
/// `2^(log2_p0 + k * log2_growth)`, saturating at 1 once the exponent is
/// nonnegative and clamped below at 2^-1074.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbSchedule {
    pub log2_p0: f64,
    pub log2_growth: f64,
    /// First iteration count at which the probability is 1.
    pub saturate_at: u32,
}

pub const MIN_LOG2_PROB: f64 = -1074.0;

impl ProbSchedule {
    pub fn new(log2_p0: f64, growth: f64) -> Self {
        assert!(growth > 1.0, "growth factor must exceed 1");
        let log2_p0 = log2_p0.clamp(MIN_LOG2_PROB, 0.0);
        let log2_growth = growth.log2();
        let mut saturate_at = ((-log2_p0) / log2_growth).ceil().max(0.0) as u32;
        while saturate_at > 0 && log2_p0 + (saturate_at - 1) as f64 * log2_growth >= 0.0 {
            saturate_at -= 1;
        }
        while log2_p0 + saturate_at as f64 * log2_growth < 0.0 {
            saturate_at += 1;
        }
        ProbSchedule { log2_p0, log2_growth, saturate_at }
    }

    pub fn log2_prob(&self, iters: u32) -> f64 {
        if iters >= self.saturate_at {
            0.0
        } else {
            (self.log2_p0 + iters as f64 * self.log2_growth).max(MIN_LOG2_PROB)
        }
    }

    pub fn prob(&self, iters: u32) -> f64 {
        if iters >= self.saturate_at {
            1.0
        } else {
            self.log2_prob(iters).exp2()
        }
    }
}

/// One installed primitive: its cells, layout and constants.
#[derive(Debug, Clone)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    /// The value cell C.
    pub cell: CellId,
    /// The auxiliary cell W of the long-lived CAS.
    pub w_cell: Option<CellId>,
    pub value_mask: u64,
    /// Width of the fingerprint/counter packed below the value.
    pub fp_bits: u32,
    /// CAS counter modulus F.
    pub modulus: u64,
    pub w_bits: u32,
    pub prob: ProbSchedule,
    pub wait_nops: u32,
    pub fault: Option<Fault>,
}

impl Primitive {
    /// Allocates the primitive's cells. The initial fingerprint is drawn from
    /// `init_tape` (modeled as an update applied just before time 0).
    pub fn install(kind: PrimitiveKind, cfg: &SimConfig, mem: &mut Memory, init_tape: &mut Tape) -> Result<Self> {
        let value_mask = cfg.value_mask();
        let log2_p = cfg.log2_p();
        let (fp_bits, modulus, prob) = match kind {
            PrimitiveKind::NaiveRegister | PrimitiveKind::NaiveCas => {
                cfg.validate()?;
                (0, 1, ProbSchedule::new(0.0, 2.0))
            }
            PrimitiveKind::BackOnRegister => {
                cfg.validate_register()?;
                let fp = cfg.register_fp_bits();
                let growth = 1.0 + 1.0 / cfg.c as f64;
                (fp, 1u64 << fp, ProbSchedule::new(-cfg.p0_exponent * log2_p, growth))
            }
            PrimitiveKind::BasicCas | PrimitiveKind::ImprovedCas => {
                cfg.validate_cas(kind == PrimitiveKind::ImprovedCas)?;
                (cfg.cas_fp_bits(), cfg.cas_modulus(), ProbSchedule::new(-cfg.cas_p0_exponent * log2_p, 2.0))
            }
        };
        let f0 = match kind {
            PrimitiveKind::BackOnRegister => init_tape.uniform_inclusive(0, mask(fp_bits)),
            PrimitiveKind::BasicCas | PrimitiveKind::ImprovedCas => init_tape.uniform_inclusive(0, modulus - 1),
            _ => 0,
        };
        let cell = mem.alloc(Word(f0))?;
        let w_bits = cfg.w_cell_bits();
        let w_cell = if kind == PrimitiveKind::ImprovedCas {
            Some(mem.alloc(Word(init_tape.uniform_inclusive(0, mask(w_bits))))?)
        } else {
            None
        };
        Ok(Primitive {
            kind,
            cell,
            w_cell,
            value_mask,
            fp_bits,
            modulus,
            w_bits,
            prob,
            wait_nops: cfg.wait_nops(),
            fault: None,
        })
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        if fault == Some(Fault::TripleGrowth) {
            self.prob = ProbSchedule::new(self.prob.log2_p0, 3.0);
        }
        self
    }

    pub fn pack(&self, x: u64, f: u64) -> Word {
        Word(((x & self.value_mask) << self.fp_bits) | (f & mask(self.fp_bits)))
    }

    pub fn value_of(&self, w: Word) -> u64 {
        if self.fp_bits >= 64 {
            0
        } else {
            (w.0 >> self.fp_bits) & self.value_mask
        }
    }

    pub fn fingerprint_of(&self, w: Word) -> u64 {
        w.0 & mask(self.fp_bits)
    }

    /// Initial state of an operation on this primitive.
    pub fn start(&self, spec: PrimOp) -> Result<PrimMachine> {
        use PrimitiveKind::*;
        let check = |x: u64| -> Result<u64> {
            if x & !self.value_mask != 0 {
                Err(SimError::config(format!("operand {x} does not fit in the value width")))
            } else {
                Ok(x)
            }
        };
        Ok(match (self.kind, spec) {
            (_, PrimOp::Read) => PrimMachine::Read(LoadRead),
            (NaiveRegister, PrimOp::Write(x)) => PrimMachine::NaiveWrite(NaiveWrite { value: check(x)? }),
            (BackOnRegister, PrimOp::Write(x)) => PrimMachine::Write(RegisterWrite::new(check(x)?)),
            (NaiveCas, PrimOp::Cas(e, n)) => PrimMachine::NaiveCas(naive::NaiveCas { expected: check(e)?, new: check(n)? }),
            (BasicCas, PrimOp::Cas(e, n)) => PrimMachine::Basic(basic_cas::BasicCas::new(check(e)?, check(n)?)),
            (ImprovedCas, PrimOp::Cas(e, n)) => PrimMachine::Improved(improved_cas::ImprovedCas::new(check(e)?, check(n)?)),
            (k, op) => return Err(SimError::config(format!("{} does not support {op:?}", k.as_str()))),
        })
    }

    /// Number of local instructions the pseudocode runs right after the
    /// instruction labelled `label` (or before the first one, for `None`).
    /// The reduced machine folds these into a single transition.
    pub fn folded_locals(&self, label: Option<Label>) -> u32 {
        use PrimitiveKind::*;
        match (self.kind, label) {
            (_, Some(Label::Read)) => 1,
            (NaiveRegister, None) | (NaiveCas, None) => 0,
            (_, Some(Label::Store)) | (_, Some(Label::Cas)) => 1,
            (BackOnRegister, None) => 1,
            (BackOnRegister, Some(Label::S)) => 0,
            (BackOnRegister, Some(Label::R)) => 3,
            (BackOnRegister, Some(Label::W)) => 1,
            (BasicCas, None) => 1,
            (_, Some(Label::S)) => 2,
            (_, Some(Label::R)) => 3,
            (_, Some(Label::C)) => 1,
            (ImprovedCas, None) => 0,
            (_, Some(Label::SPrime)) => 0,
            (_, Some(Label::Wait)) => 1,
            (_, Some(Label::RPrime)) => 3,
            (_, Some(Label::WPrime)) => 1,
            _ => 0,
        }
    }

    /// Largest number of folded local instructions between two shared
    /// instructions (K).
    pub fn max_folded_locals(&self) -> u32 {
        3
    }
}

/// A primitive-level operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimOp {
    Read,
    Write(u64),
    Cas(u64, u64),
}

/// Outcome of applying the instruction an operation was pending on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Continue,
    Done(OpResult),
}

/// Analysis view of an operation's reduced-machine state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub label: Label,
    /// Invocation probability while pending on a back-on R.
    pub invocation_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrimMachine {
    Read(LoadRead),
    NaiveWrite(NaiveWrite),
    NaiveCas(NaiveCas),
    Write(RegisterWrite),
    Basic(BasicCas),
    Improved(ImprovedCas),
    Script(Script),
}

impl PrimMachine {
    pub fn instr(&self, p: &Primitive) -> (Instr, Label) {
        match self {
            PrimMachine::Read(_) => (Instr::Load { cell: p.cell }, Label::Read),
            PrimMachine::NaiveWrite(m) => m.instr(p),
            PrimMachine::NaiveCas(m) => m.instr(p),
            PrimMachine::Write(m) => m.instr(p),
            PrimMachine::Basic(m) => m.instr(p),
            PrimMachine::Improved(m) => m.instr(p),
            PrimMachine::Script(m) => m.instr(),
        }
    }

    pub fn on_applied(&mut self, ret: u64, p: &Primitive, tape: &mut Tape) -> Transition {
        match self {
            PrimMachine::Read(_) => Transition::Done(OpResult::Value(p.value_of(Word(ret)))),
            PrimMachine::NaiveWrite(_) => Transition::Done(OpResult::Unit),
            PrimMachine::NaiveCas(_) => Transition::Done(OpResult::Bool(ret != 0)),
            PrimMachine::Write(m) => m.on_applied(ret, p, tape),
            PrimMachine::Basic(m) => m.on_applied(ret, p, tape),
            PrimMachine::Improved(m) => m.on_applied(ret, p, tape),
            PrimMachine::Script(m) => m.on_applied(ret),
        }
    }

    pub fn probe(&self, p: &Primitive) -> Probe {
        match self {
            PrimMachine::Write(m) => m.probe(p),
            PrimMachine::Basic(m) => m.probe(p),
            PrimMachine::Improved(m) => m.probe(p),
            other => Probe { label: other.instr(p).1, invocation_prob: None },
        }
    }

    /// Whether a hardware CAS of this operation has been applied.
    pub fn applied_hardware_cas(&self) -> bool {
        match self {
            PrimMachine::Basic(m) => m.cas_applied,
            PrimMachine::Improved(m) => m.basic.cas_applied,
            _ => false,
        }
    }
}
