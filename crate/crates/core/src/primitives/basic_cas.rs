//! Short-lived CAS: S, an R loop with doubling probability, then a hardware
//! CAS that bumps the modular counter.

use super::{Fault, Primitive, Probe, Transition};
use crate::memory::{Instr, Label, Word};
use crate::ops::OpResult;
use crate::rng::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasicState {
    S,
    R,
    C,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicCas {
    pub expected: u64,
    pub new: u64,
    pub state: BasicState,
    /// The (x_old, f_old) word observed by S.
    pub old: Word,
    pub iters: u32,
    pub cas_applied: bool,
}

impl BasicCas {
    pub fn new(expected: u64, new: u64) -> Self {
        BasicCas { expected, new, state: BasicState::S, old: Word(0), iters: 0, cas_applied: false }
    }

    pub fn instr(&self, p: &Primitive) -> (Instr, Label) {
        match self.state {
            BasicState::S => (Instr::Load { cell: p.cell }, Label::S),
            BasicState::R => (Instr::Load { cell: p.cell }, Label::R),
            BasicState::C => {
                let f_new = (p.fingerprint_of(self.old) + 1) % p.modulus;
                (Instr::Cas { cell: p.cell, expected: self.old, new: p.pack(self.new, f_new) }, Label::C)
            }
        }
    }

    pub fn on_applied(&mut self, ret: u64, p: &Primitive, tape: &mut Tape) -> Transition {
        match self.state {
            BasicState::S => {
                self.old = Word(ret);
                let x_old = p.value_of(self.old);
                if x_old != self.expected {
                    return Transition::Done(OpResult::Bool(false));
                }
                if self.new == x_old {
                    return Transition::Done(OpResult::Bool(true));
                }
                self.state = BasicState::R;
                Transition::Continue
            }
            BasicState::R => {
                if Word(ret) != self.old {
                    return Transition::Done(OpResult::Bool(false));
                }
                let k = if p.fault == Some(Fault::MisfoldedUpdate) { self.iters + 1 } else { self.iters };
                if tape.bernoulli(p.prob.prob(k)) {
                    self.state = BasicState::C;
                } else {
                    self.iters += 1;
                }
                Transition::Continue
            }
            BasicState::C => {
                self.cas_applied = true;
                Transition::Done(OpResult::Bool(ret != 0))
            }
        }
    }

    pub fn probe(&self, p: &Primitive) -> Probe {
        let (_, label) = self.instr(p);
        let invocation_prob = (self.state == BasicState::R).then(|| p.prob.prob(self.iters));
        Probe { label, invocation_prob }
    }
}
