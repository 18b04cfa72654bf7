//! Word-RAM shared memory with per-cell FIFO instruction queues.

use std::collections::VecDeque;
use std::fmt;

use crate::config::mask;
use crate::error::{Result, SimError};
use crate::rng::Tape;
use crate::{OpId, Pid};

pub type CellId = u32;

/// A machine word. The owning memory enforces `bits < 2^w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(pub u64);

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Shared and local instructions a process can invoke.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instr {
    Load { cell: CellId },
    Store { cell: CellId, value: Word },
    Cas { cell: CellId, expected: Word, new: Word },
    /// Samples uniformly from `[lo, hi]` when applied, never earlier.
    StoreRandom { cell: CellId, lo: Word, hi: Word },
    Nop,
    /// A folded-out local instruction (only issued by expanded machines).
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstrKind {
    Load,
    Store,
    Cas,
    StoreRandom,
    Nop,
    Local,
}

impl InstrKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstrKind::Load => "Load",
            InstrKind::Store => "Store",
            InstrKind::Cas => "Cas",
            InstrKind::StoreRandom => "StoreRandom",
            InstrKind::Nop => "Nop",
            InstrKind::Local => "Local",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Load" => InstrKind::Load,
            "Store" => InstrKind::Store,
            "Cas" => InstrKind::Cas,
            "StoreRandom" => InstrKind::StoreRandom,
            "Nop" => InstrKind::Nop,
            "Local" => InstrKind::Local,
            _ => return None,
        })
    }

    pub fn is_state_changing(self) -> bool {
        matches!(self, InstrKind::Store | InstrKind::Cas | InstrKind::StoreRandom)
    }
}

impl Instr {
    pub fn kind(&self) -> InstrKind {
        match self {
            Instr::Load { .. } => InstrKind::Load,
            Instr::Store { .. } => InstrKind::Store,
            Instr::Cas { .. } => InstrKind::Cas,
            Instr::StoreRandom { .. } => InstrKind::StoreRandom,
            Instr::Nop => InstrKind::Nop,
            Instr::Local => InstrKind::Local,
        }
    }

    pub fn cell(&self) -> Option<CellId> {
        match *self {
            Instr::Load { cell }
            | Instr::Store { cell, .. }
            | Instr::Cas { cell, .. }
            | Instr::StoreRandom { cell, .. } => Some(cell),
            Instr::Nop | Instr::Local => None,
        }
    }

    pub fn is_state_changing(&self) -> bool {
        self.kind().is_state_changing()
    }
}

/// Which line of an algorithm an instruction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Load of a high-level Read.
    Read,
    S,
    R,
    W,
    C,
    SPrime,
    /// The waiting Nop of the long-lived CAS.
    Wait,
    RPrime,
    WPrime,
    /// Hardware Store of a naive write.
    Store,
    /// Hardware CAS of a naive CAS.
    Cas,
    Local,
    /// Instruction issued by a test script.
    Script,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Read => "L",
            Label::S => "S",
            Label::R => "R",
            Label::W => "W",
            Label::C => "C",
            Label::SPrime => "S'",
            Label::Wait => "N",
            Label::RPrime => "R'",
            Label::WPrime => "W'",
            Label::Store => "ST",
            Label::Cas => "CAS",
            Label::Local => "LOC",
            Label::Script => "X",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "L" => Label::Read,
            "S" => Label::S,
            "R" => Label::R,
            "W" => Label::W,
            "C" => Label::C,
            "S'" => Label::SPrime,
            "N" => Label::Wait,
            "R'" => Label::RPrime,
            "W'" => Label::WPrime,
            "ST" => Label::Store,
            "CAS" => Label::Cas,
            "LOC" => Label::Local,
            "X" => Label::Script,
            _ => return None,
        })
    }
}

/// A pending state-changing instruction in some cell's queue.
#[derive(Debug, Clone)]
pub struct QueuedRecord {
    pub pid: Pid,
    pub op: OpId,
    pub instr: Instr,
    pub label: Label,
    pub invoked_at: u64,
    /// Per-cell enqueue sequence number.
    pub ticket: u64,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub id: CellId,
    pub value: Word,
    pub queue: VecDeque<QueuedRecord>,
    /// Incremented whenever an apply changes `value`.
    pub version: u64,
    pub next_ticket: u64,
}

impl Cell {
    pub fn new(id: CellId, value: Word) -> Self {
        Cell { id, value, queue: VecDeque::new(), version: 0, next_ticket: 0 }
    }
}

/// Hardware CAS semantics at application time.
pub fn apply_cas(cell: &mut Cell, expected: Word, new: Word) -> bool {
    if cell.value == expected {
        if new != cell.value {
            cell.version += 1;
        }
        cell.value = new;
        true
    } else {
        false
    }
}

/// Samples uniformly from `[lo, hi]` with the issuer's tape and writes it.
pub fn apply_store_random(cell: &mut Cell, lo: Word, hi: Word, word_bits: u32, tape: &mut Tape) -> Result<Word> {
    check_interval(lo, hi, word_bits)?;
    let x = Word(tape.uniform_inclusive(lo.0, hi.0));
    if x != cell.value {
        cell.version += 1;
    }
    cell.value = x;
    Ok(x)
}

pub fn check_interval(lo: Word, hi: Word, word_bits: u32) -> Result<()> {
    if hi < lo {
        return Err(SimError::config(format!("empty StoreRandom interval [{lo}, {hi}]")));
    }
    if hi.0 > mask(word_bits) {
        return Err(SimError::config(format!("StoreRandom interval [{lo}, {hi}] exceeds {word_bits}-bit words")));
    }
    Ok(())
}

/// The shared memory: a dense vector of cells.
#[derive(Debug, Clone)]
pub struct Memory {
    pub word_bits: u32,
    pub cells: Vec<Cell>,
}

impl Memory {
    pub fn new(word_bits: u32) -> Self {
        Memory { word_bits, cells: Vec::new() }
    }

    pub fn alloc(&mut self, init: Word) -> Result<CellId> {
        if init.0 > mask(self.word_bits) {
            return Err(SimError::config(format!("initial value {init} exceeds word width")));
        }
        let id = self.cells.len() as CellId;
        self.cells.push(Cell::new(id, init));
        Ok(id)
    }

    pub fn cell(&self, id: CellId) -> Result<&Cell> {
        self.cells.get(id as usize).ok_or(SimError::UnknownCell(id))
    }

    pub fn cell_mut(&mut self, id: CellId) -> Result<&mut Cell> {
        self.cells.get_mut(id as usize).ok_or(SimError::UnknownCell(id))
    }

    pub fn value(&self, id: CellId) -> Result<Word> {
        Ok(self.cell(id)?.value)
    }

    pub fn queue_len(&self, id: CellId) -> usize {
        self.cells.get(id as usize).map_or(0, |c| c.queue.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(v: u64) -> Cell {
        Cell::new(0, Word(v))
    }

    #[test]
    fn cas_match_writes() {
        let mut c = cell(5);
        assert!(apply_cas(&mut c, Word(5), Word(7)));
        assert_eq!(c.value, Word(7));
    }

    #[test]
    fn cas_mismatch_leaves_cell() {
        let mut c = cell(5);
        assert!(!apply_cas(&mut c, Word(6), Word(7)));
        assert_eq!(c.value, Word(5));
    }

    #[test]
    fn cas_idempotent_match() {
        let mut c = cell(5);
        assert!(apply_cas(&mut c, Word(5), Word(5)));
        assert_eq!(c.value, Word(5));
        assert_eq!(c.version, 0);
    }

    #[test]
    fn store_random_degenerate_interval() {
        let mut c = cell(9);
        let mut tape = Tape::new(1, "sample", 0);
        let x = apply_store_random(&mut c, Word(0), Word(0), 64, &mut tape).unwrap();
        assert_eq!(x, Word(0));
        assert_eq!(c.value, Word(0));
    }

    #[test]
    fn store_random_rejects_wide_interval() {
        let mut c = cell(0);
        let mut tape = Tape::new(1, "sample", 0);
        assert!(apply_store_random(&mut c, Word(0), Word(256), 8, &mut tape).is_err());
        assert!(apply_store_random(&mut c, Word(3), Word(2), 8, &mut tape).is_err());
    }

    #[test]
    fn store_random_mean_matches_uniform() {
        // Oracle: uniform on [0, 2^k - 1] has mean (2^k - 1)/2 and
        // variance (4^k - 1)/12.
        let k = 10u32;
        let hi = (1u64 << k) - 1;
        let n = 100_000u64;
        let mut c = cell(0);
        let mut tape = Tape::new(42, "sample", 0);
        let mut sum = 0f64;
        for _ in 0..n {
            sum += apply_store_random(&mut c, Word(0), Word(hi), 64, &mut tape).unwrap().0 as f64;
        }
        let mean = sum / n as f64;
        let expect = hi as f64 / 2.0;
        let var = ((1u64 << (2 * k)) as f64 - 1.0) / 12.0;
        let se = (var / n as f64).sqrt();
        assert!((mean - expect).abs() <= 3.0 * se, "mean {mean} vs {expect} (se {se})");
    }

    #[test]
    fn unknown_cell() {
        let m = Memory::new(64);
        assert!(matches!(m.cell(3), Err(SimError::UnknownCell(3))));
    }
}
