//! Back-on register Write: S, then an R loop, then a StoreRandom W.

use super::{Fault, Primitive, Probe, Transition};
use crate::config::mask;
use crate::memory::{Instr, Label, Word};
use crate::ops::OpResult;
use crate::rng::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteState {
    S,
    R,
    W,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterWrite {
    pub value: u64,
    pub state: WriteState,
    pub f_old: u64,
    /// Unsuccessful R iterations so far.
    pub iters: u32,
}

impl RegisterWrite {
    pub fn new(value: u64) -> Self {
        RegisterWrite { value, state: WriteState::S, f_old: 0, iters: 0 }
    }

    pub fn instr(&self, p: &Primitive) -> (Instr, Label) {
        match self.state {
            WriteState::S => (Instr::Load { cell: p.cell }, Label::S),
            WriteState::R => (Instr::Load { cell: p.cell }, Label::R),
            WriteState::W => {
                let lo = p.pack(self.value, 0);
                let hi = Word(lo.0 | mask(p.fp_bits));
                (Instr::StoreRandom { cell: p.cell, lo, hi }, Label::W)
            }
        }
    }

    pub fn on_applied(&mut self, ret: u64, p: &Primitive, tape: &mut Tape) -> Transition {
        match self.state {
            WriteState::S => {
                self.f_old = p.fingerprint_of(Word(ret));
                self.state = WriteState::R;
                Transition::Continue
            }
            WriteState::R => {
                if p.fingerprint_of(Word(ret)) != self.f_old {
                    return Transition::Done(OpResult::Unit);
                }
                let k = if p.fault == Some(Fault::MisfoldedUpdate) { self.iters + 1 } else { self.iters };
                if tape.bernoulli(p.prob.prob(k)) {
                    self.state = WriteState::W;
                } else {
                    self.iters += 1;
                }
                Transition::Continue
            }
            WriteState::W => Transition::Done(OpResult::Unit),
        }
    }

    pub fn probe(&self, p: &Primitive) -> Probe {
        let (_, label) = self.instr(p);
        let invocation_prob = (self.state == WriteState::R).then(|| p.prob.prob(self.iters));
        Probe { label, invocation_prob }
    }
}
