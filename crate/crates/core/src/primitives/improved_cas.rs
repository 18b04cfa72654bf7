//! Long-lived CAS: a waiting phase on W, the short-lived CAS on C, then a
//! fresh random string into W if a hardware CAS was applied.

use super::{BasicCas, Primitive, Probe, Transition};
use crate::config::mask;
use crate::memory::{Instr, Label, Word};
use crate::ops::OpResult;
use crate::rng::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImprovedPhase {
    SPrime,
    /// Remaining Nops before the next R'.
    Wait(u32),
    RPrime,
    Calling,
    WPrime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovedCas {
    pub phase: ImprovedPhase,
    pub y_old: u64,
    pub basic: BasicCas,
    pub result: bool,
    /// Own scheduled steps taken so far.
    pub steps: u64,
}

impl ImprovedCas {
    pub fn new(expected: u64, new: u64) -> Self {
        ImprovedCas { phase: ImprovedPhase::SPrime, y_old: 0, basic: BasicCas::new(expected, new), result: false, steps: 0 }
    }

    fn w_cell(p: &Primitive) -> u32 {
        p.w_cell.expect("improved CAS without W cell")
    }

    fn enter_wait(&mut self, p: &Primitive) {
        self.phase = if p.wait_nops == 0 { ImprovedPhase::RPrime } else { ImprovedPhase::Wait(p.wait_nops) };
    }

    pub fn instr(&self, p: &Primitive) -> (Instr, Label) {
        match self.phase {
            ImprovedPhase::SPrime => (Instr::Load { cell: Self::w_cell(p) }, Label::SPrime),
            ImprovedPhase::Wait(_) => (Instr::Nop, Label::Wait),
            ImprovedPhase::RPrime => (Instr::Load { cell: Self::w_cell(p) }, Label::RPrime),
            ImprovedPhase::Calling => self.basic.instr(p),
            ImprovedPhase::WPrime => {
                (Instr::StoreRandom { cell: Self::w_cell(p), lo: Word(0), hi: Word(mask(p.w_bits)) }, Label::WPrime)
            }
        }
    }

    pub fn on_applied(&mut self, ret: u64, p: &Primitive, tape: &mut Tape) -> Transition {
        self.steps += 1;
        match self.phase {
            ImprovedPhase::SPrime => {
                self.y_old = ret;
                self.enter_wait(p);
                Transition::Continue
            }
            ImprovedPhase::Wait(n) => {
                self.phase = if n > 1 { ImprovedPhase::Wait(n - 1) } else { ImprovedPhase::RPrime };
                Transition::Continue
            }
            ImprovedPhase::RPrime => {
                if ret == self.y_old {
                    self.phase = ImprovedPhase::Calling;
                } else {
                    self.y_old = ret;
                    self.enter_wait(p);
                }
                Transition::Continue
            }
            ImprovedPhase::Calling => match self.basic.on_applied(ret, p, tape) {
                Transition::Continue => Transition::Continue,
                Transition::Done(OpResult::Bool(b)) if self.basic.cas_applied => {
                    self.result = b;
                    self.phase = ImprovedPhase::WPrime;
                    Transition::Continue
                }
                done => done,
            },
            ImprovedPhase::WPrime => Transition::Done(OpResult::Bool(self.result)),
        }
    }

    pub fn probe(&self, p: &Primitive) -> Probe {
        match self.phase {
            ImprovedPhase::Calling => self.basic.probe(p),
            _ => Probe { label: self.instr(p).1, invocation_prob: None },
        }
    }
}
