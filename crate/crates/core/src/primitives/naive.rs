//! Single-instruction baselines, the plain Read, and test scripts.

use super::{Primitive, Transition};
use crate::memory::{Instr, Label, Word};
use crate::ops::OpResult;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadRead;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaiveWrite {
    pub value: u64,
}

impl NaiveWrite {
    pub fn instr(&self, p: &Primitive) -> (Instr, Label) {
        (Instr::Store { cell: p.cell, value: Word(self.value) }, Label::Store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaiveCas {
    pub expected: u64,
    pub new: u64,
}

impl NaiveCas {
    pub fn instr(&self, p: &Primitive) -> (Instr, Label) {
        (Instr::Cas { cell: p.cell, expected: Word(self.expected), new: Word(self.new) }, Label::Cas)
    }
}

/// A fixed instruction sequence; returns the last instruction's result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub instrs: Vec<Instr>,
    pub next: usize,
}

impl Script {
    pub fn new(instrs: Vec<Instr>) -> Self {
        assert!(!instrs.is_empty(), "empty script");
        Script { instrs, next: 0 }
    }

    pub fn instr(&self) -> (Instr, Label) {
        (self.instrs[self.next], Label::Script)
    }

    pub fn on_applied(&mut self, ret: u64) -> Transition {
        self.next += 1;
        if self.next == self.instrs.len() {
            Transition::Done(OpResult::Value(ret))
        } else {
            Transition::Continue
        }
    }
}
