//! Checks over recorded histories: model invariants and scheduler
//! compliance. These recompute everything from the event log and share no
//! state with the engine or the schedulers.

use std::collections::HashMap;

use crate::history::{EventKind, History};
use crate::memory::{CellId, InstrKind, Word};
use crate::sched::{window_sum_with, CoinLedger};
use crate::{OpId, Pid};

/// Verifies the model semantics on a full history.
///
/// `initial` holds the cell values at time 0. Returns one message per
/// violation (empty when the history is consistent).
pub fn check_history(history: &History, initial: &[Word]) -> Vec<String> {
    let mut errs = Vec::new();
    let mut value: Vec<Word> = initial.to_vec();
    // Values as of the start of the current step.
    let mut step_start: Vec<Word> = initial.to_vec();
    let mut cur_t = 0u64;
    let mut applied_this_step: Vec<bool> = vec![false; initial.len()];
    let mut last_ticket: Vec<Option<u64>> = vec![None; initial.len()];
    let mut enqueued: HashMap<(CellId, u64), (Pid, OpId, u64)> = HashMap::new();
    // pid -> time its outstanding record was enqueued
    let mut waiting: HashMap<Pid, u64> = HashMap::new();
    let mut scheduled_at: HashMap<Pid, u64> = HashMap::new();
    let mut prev_t = 0u64;

    for (i, e) in history.iter().enumerate() {
        if e.t < prev_t {
            errs.push(format!("event {i}: time went backwards ({} after {prev_t})", e.t));
        }
        prev_t = e.t;
        if e.t != cur_t {
            cur_t = e.t;
            step_start.clone_from(&value);
            applied_this_step.iter_mut().for_each(|a| *a = false);
        }
        match e.kind {
            EventKind::Invoke { .. } => {
                if let Some(&t0) = waiting.get(&e.pid) {
                    errs.push(format!("t={}: process {} invoked while waiting since t={t0}", e.t, e.pid));
                }
                if scheduled_at.insert(e.pid, e.t) == Some(e.t) {
                    errs.push(format!("t={}: process {} invoked twice in one step", e.t, e.pid));
                }
            }
            EventKind::Enqueue { cell, ticket, .. } => {
                enqueued.insert((cell, ticket), (e.pid, e.op, e.t));
                waiting.insert(e.pid, e.t);
            }
            EventKind::Apply { instr, cell: Some(cell), ticket, returned, post, .. } => {
                let c = cell as usize;
                if c >= value.len() {
                    errs.push(format!("t={}: apply on unknown cell {cell}", e.t));
                    continue;
                }
                match ticket {
                    None => {
                        if instr != InstrKind::Load {
                            errs.push(format!("t={}: unqueued {instr:?} apply", e.t));
                        }
                        if applied_this_step[c] {
                            errs.push(format!("t={}: load of cell {cell} after an apply in the same step", e.t));
                        }
                        if returned != step_start[c].0 {
                            errs.push(format!(
                                "t={}: load of cell {cell} returned {returned}, pre-step value was {}",
                                e.t, step_start[c].0
                            ));
                        }
                    }
                    Some(tk) => {
                        if applied_this_step[c] {
                            errs.push(format!("t={}: second apply on cell {cell} in one step", e.t));
                        }
                        applied_this_step[c] = true;
                        let expect = last_ticket[c].map_or(0, |x| x + 1);
                        if tk != expect {
                            errs.push(format!("t={}: cell {cell} applied ticket {tk}, expected {expect}", e.t));
                        }
                        last_ticket[c] = Some(tk);
                        match enqueued.remove(&(cell, tk)) {
                            None => errs.push(format!("t={}: apply of ticket {tk} on cell {cell} without enqueue", e.t)),
                            Some((pid, op, t0)) => {
                                if pid != e.pid || op != e.op || t0 > e.t {
                                    errs.push(format!("t={}: apply of ticket {tk} does not match its enqueue", e.t));
                                }
                            }
                        }
                        if waiting.remove(&e.pid).is_none() {
                            errs.push(format!("t={}: process {} applied without waiting", e.t, e.pid));
                        }
                        if let Some(p) = post {
                            value[c] = p;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    errs
}

/// Per-process readiness and scheduling, rebuilt from a history.
#[derive(Debug, Clone)]
pub struct Timeline {
    pub horizon: u64,
    /// ready[p][t]: p had an ongoing operation and no queued record at the
    /// start of step t (after that step's invocations).
    pub ready: Vec<Vec<bool>>,
    /// scheduled[p][t]: p invoked an instruction at t.
    pub scheduled: Vec<Vec<bool>>,
}

impl Timeline {
    pub fn build(history: &History, processes: u32, horizon: u64) -> Self {
        let n = processes as usize;
        let h = horizon as usize;
        let mut ongoing = vec![vec![false; h]; n];
        let mut not_waiting = vec![vec![true; h]; n];
        let mut scheduled = vec![vec![false; h]; n];
        let mut open: HashMap<OpId, (Pid, u64)> = HashMap::new();
        let mut enq: HashMap<Pid, u64> = HashMap::new();
        let mark = |v: &mut Vec<bool>, a: u64, b: u64, x: bool| {
            for slot in v.iter_mut().take(b.min(horizon) as usize).skip(a as usize) {
                *slot = x;
            }
        };
        for e in history.iter() {
            let p = e.pid as usize;
            if p >= n {
                continue;
            }
            match e.kind {
                EventKind::OpInvoke { parent: None, .. } => {
                    open.insert(e.op, (e.pid, e.t));
                }
                EventKind::OpReturn { parent: None, .. } => {
                    if let Some((_, t0)) = open.remove(&e.op) {
                        mark(&mut ongoing[p], t0, e.t, true);
                    }
                }
                EventKind::Invoke { .. } => {
                    if (e.t as usize) < h {
                        scheduled[p][e.t as usize] = true;
                    }
                }
                EventKind::Enqueue { .. } => {
                    enq.insert(e.pid, e.t);
                }
                EventKind::Apply { ticket: Some(_), .. } => {
                    if let Some(t0) = enq.remove(&e.pid) {
                        mark(&mut not_waiting[p], t0 + 1, e.t + 1, false);
                    }
                }
                _ => {}
            }
        }
        for (_, (pid, t0)) in open {
            mark(&mut ongoing[pid as usize], t0, horizon, true);
        }
        for (pid, t0) in enq {
            mark(&mut not_waiting[pid as usize], t0 + 1, horizon, false);
        }
        let ready = ongoing
            .iter()
            .zip(&not_waiting)
            .map(|(o, w)| o.iter().zip(w).map(|(&a, &b)| a && b).collect())
            .collect();
        Timeline { horizon, ready, scheduled }
    }

    fn count_scheduled(&self, p: usize, a: u64, b: u64) -> u64 {
        self.scheduled[p][a as usize..b.min(self.horizon) as usize].iter().filter(|&&x| x).count() as u64
    }

    fn always_ready(&self, p: usize, a: u64, b: u64) -> bool {
        self.ready[p][a as usize..b.min(self.horizon) as usize].iter().all(|&x| x)
    }
}

/// Every (p, j) with coin 1, p ready at `j tau`, and no step of p in the
/// window. Windows must lie inside the history's horizon.
pub fn audit_compliance(history: &History, ledger: &CoinLedger, horizon: u64) -> Vec<(Pid, u64)> {
    let tl = Timeline::build(history, ledger.processes, horizon);
    audit_timeline(&tl, ledger)
}

pub fn audit_timeline(tl: &Timeline, ledger: &CoinLedger) -> Vec<(Pid, u64)> {
    let tau = ledger.tau as u64;
    let mut out = Vec::new();
    for j in 0..ledger.windows_drawn() {
        let start = j * tau;
        if start + tau > tl.horizon {
            break;
        }
        for p in 0..ledger.processes {
            if ledger.coin(p, j) == Some(true) && tl.ready[p as usize][start as usize] && tl.count_scheduled(p as usize, start, start + tau) == 0 {
                out.push((p, j));
            }
        }
    }
    out
}

/// Counts intervals `[t1, t2)` where the coin sum is at least k but the
/// process was ready throughout and scheduled fewer than k times.
/// Intervals start every `stride` steps with lengths `tau * 2^i`.
pub fn coin_implies_scheduled_violations(tl: &Timeline, ledger: &CoinLedger, stride: u64) -> u64 {
    let tau = ledger.tau as u64;
    let mut bad = 0;
    for p in 0..ledger.processes {
        let mut t1 = 0;
        while t1 < tl.horizon {
            let mut len = tau;
            while t1 + len <= tl.horizon && len <= 64 * tau {
                let t2 = t1 + len;
                let k = window_sum_with(ledger.tau, t1, t2, |j| ledger.coin(p, j).unwrap_or(false));
                if k > 0 && tl.always_ready(p as usize, t1, t2) && tl.count_scheduled(p as usize, t1, t2) < k {
                    bad += 1;
                }
                len *= 2;
            }
            t1 += stride.max(1);
        }
    }
    bad
}

/// Among (process, start) pairs where the process stays ready for
/// `4 k tau` steps, the fraction scheduled fewer than `k` times.
/// Returns (shortfalls, eligible).
pub fn schedule_shortfall(tl: &Timeline, tau: u32, k: u64) -> (u64, u64) {
    let span = 4 * k * tau as u64;
    let mut short = 0;
    let mut eligible = 0;
    for p in 0..tl.ready.len() {
        let mut t = 0;
        while t + span <= tl.horizon {
            if tl.always_ready(p, t, t + span) {
                eligible += 1;
                if tl.count_scheduled(p, t, t + span) < k {
                    short += 1;
                }
            }
            t += span;
        }
    }
    (short, eligible)
}
