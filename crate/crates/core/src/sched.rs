//! Schedulers and the random-delay coin ledger.
//!
//! A scheduler returns, each timestep, an ordered list of ready processes;
//! the order is also the enqueue order of their state-changing instructions.
//! Window `j` covers timesteps `[j tau, (j + 1) tau)`; at its first timestep
//! the ledger flips one fair coin per process. A compliant scheduler must
//! schedule every process that has coin 1 and is ready at `j tau` at least
//! once inside the window.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use crate::engine::World;
use crate::error::{Result, SimError};
use crate::rng;
use crate::Pid;

/// Fair scheduling coins, one per (process, window).
#[derive(Debug, Clone)]
pub struct CoinLedger {
    pub tau: u32,
    pub processes: u32,
    rng: ChaCha8Rng,
    retain: bool,
    /// Coins of all drawn windows (when retained), `processes` per window.
    rows: Vec<bool>,
    current: Vec<bool>,
    /// Number of windows drawn so far.
    drawn: u64,
}

impl CoinLedger {
    pub fn new(seed: u64, processes: u32, tau: u32, retain: bool) -> Self {
        CoinLedger {
            tau: tau.max(1),
            processes,
            rng: rng::stream(seed, "coins", 0),
            retain,
            rows: Vec::new(),
            current: vec![false; processes as usize],
            drawn: 0,
        }
    }

    /// Draws the coins of window `t / tau` if `t` starts a window. Returns
    /// true when a new window began.
    pub fn begin_step(&mut self, t: u64) -> Result<bool> {
        if !t.is_multiple_of(self.tau as u64) {
            return Ok(false);
        }
        let j = t / self.tau as u64;
        if j != self.drawn {
            return Err(SimError::contract(t, format!("coin window {j} drawn out of order (next is {})", self.drawn)));
        }
        let mut bits = 0u64;
        for p in 0..self.processes as usize {
            if p % 64 == 0 {
                bits = self.rng.next_u64();
            }
            self.current[p] = (bits >> (p % 64)) & 1 == 1;
        }
        if self.retain {
            self.rows.extend_from_slice(&self.current);
        }
        self.drawn += 1;
        Ok(true)
    }

    /// Windows drawn so far.
    pub fn windows_drawn(&self) -> u64 {
        self.drawn
    }

    pub fn current(&self) -> &[bool] {
        &self.current
    }

    /// Coin of `p` for window `j`, if it has been drawn and retained.
    pub fn coin(&self, p: Pid, j: u64) -> Option<bool> {
        if j >= self.drawn {
            return None;
        }
        if self.retain {
            self.rows.get((j * self.processes as u64 + p as u64) as usize).copied()
        } else if j + 1 == self.drawn {
            self.current.get(p as usize).copied()
        } else {
            None
        }
    }

    /// Sum of the coins of `p` over windows `j` with `j tau` in `[t1, t2 - tau]`.
    pub fn window_sum(&self, p: Pid, t1: u64, t2: u64) -> u64 {
        window_sum_with(self.tau, t1, t2, |j| self.coin(p, j).unwrap_or(false))
    }
}

/// Sum of `coin(j)` over windows with `j tau` in `[t1, t2 - tau]`.
pub fn window_sum_with(tau: u32, t1: u64, t2: u64, mut coin: impl FnMut(u64) -> bool) -> u64 {
    let tau = tau as u64;
    if t2 < t1 + tau {
        return 0;
    }
    let first = t1.div_ceil(tau);
    let last = (t2 - tau) / tau;
    (first..=last).filter(|&j| coin(j)).count() as u64
}

/// Coins for a coarser window `tau2 >= 2 tau`: window `j` of `tau2` takes
/// the coin of the first `tau` window starting inside it.
pub fn coarsen_coin(tau: u32, tau2: u32, j: u64, coin: impl Fn(u64) -> bool) -> bool {
    assert!(tau2 >= 2 * tau, "coarser window must be at least twice as long");
    coin((j * tau2 as u64).div_ceil(tau as u64))
}

/// Coins of the `(2K + 1) tau` windows seen by a reduced machine: 1 iff at
/// least `K + 1` of the `2K + 1` underlying coins are 1.
pub fn induced_coin(k: u32, j: u64, coin: impl Fn(u64) -> bool) -> bool {
    let n = 2 * k as u64 + 1;
    (0..n).filter(|&i| coin(n * j + i)).count() as u64 > k as u64
}

/// Coin of an operation for window `j`: the process coin while the
/// operation is ongoing at `j tau`, otherwise an independent hashed coin.
pub fn operation_coin(ledger: &CoinLedger, seed: u64, pid: Pid, op: u64, ongoing_at_start: bool, j: u64) -> bool {
    if ongoing_at_start {
        ledger.coin(pid, j).unwrap_or(false)
    } else {
        rng::hashed_coin(seed, "op-coins", op, j)
    }
}

/// Order in which same-step invocations are enqueued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOrder {
    Pid,
    ReversePid,
    Random,
}

/// Adversary strategies layered on top of the random-delay obligations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hook {
    /// Obligated processes only at the last step of the window; no extras.
    Laziest,
    /// Process 0 every step; others only when obligated, at window end.
    Skew,
    /// Processes about to invoke a state-changing instruction are held to
    /// the last step of the window and released together; others run eagerly.
    PileUp,
    /// Obligated processes at a random step of the window plus random extras.
    Jitter,
}

#[derive(Debug, Clone)]
pub struct RandomDelay {
    pub hook: Hook,
    pub ledger: CoinLedger,
    owed: Vec<bool>,
    deadline: Vec<u64>,
    rng: ChaCha8Rng,
    /// Drop the first obligation found at or after this window.
    drop_from: Option<u64>,
    dropped: Option<(Pid, u64)>,
    forbidden: Option<(Pid, u64)>,
}

impl RandomDelay {
    pub fn new(hook: Hook, seed: u64, processes: u32, tau: u32, retain: bool) -> Self {
        RandomDelay {
            hook,
            ledger: CoinLedger::new(seed, processes, tau, retain),
            owed: vec![false; processes as usize],
            deadline: vec![0; processes as usize],
            rng: rng::stream(seed, "hook", 0),
            drop_from: None,
            dropped: None,
            forbidden: None,
        }
    }

    /// The obligation this scheduler skipped on purpose, if any.
    pub fn dropped(&self) -> Option<(Pid, u64)> {
        self.dropped
    }

    fn select(&mut self, world: &World, ready: &[Pid], out: &mut Vec<Pid>) -> Result<()> {
        let t = world.t();
        let tau = self.ledger.tau as u64;
        let j = t / tau;
        if self.ledger.begin_step(t)? {
            self.owed.iter_mut().for_each(|o| *o = false);
            for &p in ready {
                if self.ledger.current()[p as usize] {
                    self.owed[p as usize] = true;
                    self.deadline[p as usize] = j * tau + self.rng.gen_range(0..tau);
                }
            }
            if let Some(from) = self.drop_from {
                if self.dropped.is_none() && j >= from {
                    if let Some(p) = (0..self.owed.len()).find(|&p| self.owed[p]) {
                        self.owed[p] = false;
                        self.dropped = Some((p as Pid, j));
                        self.forbidden = Some((p as Pid, j));
                    }
                }
            }
        }
        let last = (t + 1).is_multiple_of(tau);
        out.clear();
        match self.hook {
            Hook::Laziest => {}
            Hook::Skew => {
                if world.is_ready(0) {
                    out.push(0);
                }
            }
            Hook::PileUp => {
                for &p in ready {
                    let sc = world.pending_kind(p).is_some_and(|k| k.is_state_changing());
                    if (!sc && self.owed[p as usize]) || (sc && last) {
                        out.push(p);
                    }
                }
            }
            Hook::Jitter => {
                for &p in ready {
                    if (self.owed[p as usize] && self.deadline[p as usize] == t) || self.rng.gen_bool(0.25) {
                        out.push(p);
                    }
                }
            }
        }
        if last {
            for &p in ready {
                if self.owed[p as usize] && !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        if let Some((fp, fj)) = self.forbidden {
            if fj == j {
                out.retain(|&p| p != fp);
            } else if j > fj {
                self.forbidden = None;
            }
        }
        for &p in out.iter() {
            self.owed[p as usize] = false;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Greedy {
    pub ledger: Option<CoinLedger>,
}

/// A scheduler with no random-delay guarantee: each ready process is
/// scheduled with probability 1/4.
#[derive(Debug, Clone)]
pub struct Chaos {
    pub ledger: CoinLedger,
    rng: ChaCha8Rng,
}

/// Replays a recorded schedule: timestep to ordered process list.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    pub steps: HashMap<u64, Vec<Pid>>,
}

#[derive(Debug, Clone)]
pub enum SchedulerKind {
    Greedy(Greedy),
    RandomDelay(RandomDelay),
    Chaos(Chaos),
    Replay(Replay),
}

/// A scheduler plus its enqueue-order rule.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub kind: SchedulerKind,
    pub order: EnqueueOrder,
    order_rng: ChaCha8Rng,
    ready: Vec<Pid>,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, order: EnqueueOrder, seed: u64) -> Self {
        Scheduler { kind, order, order_rng: rng::stream(seed, "enqueue-order", 0), ready: Vec::new() }
    }

    pub fn greedy(seed: u64, processes: u32, tau: u32, retain_coins: bool) -> Self {
        Scheduler::new(
            SchedulerKind::Greedy(Greedy { ledger: Some(CoinLedger::new(seed, processes, tau, retain_coins)) }),
            EnqueueOrder::Pid,
            seed,
        )
    }

    pub fn replay(steps: HashMap<u64, Vec<Pid>>) -> Self {
        Scheduler::new(SchedulerKind::Replay(Replay { steps }), EnqueueOrder::Pid, 0)
    }

    /// Builds a scheduler from its id.
    ///
    /// Ids: `greedy`, `random-delay:{laziest,skew,pile-up,jitter}`,
    /// `violating:<window>` (laziest, minus one obligation at or after the
    /// window), `chaos`. A suffix `@reverse` or `@random` changes the
    /// enqueue order.
    pub fn from_id(id: &str, seed: u64, processes: u32, tau: u32, retain_coins: bool) -> Result<Self> {
        let (base, order) = match id.split_once('@') {
            Some((b, "pid")) => (b, EnqueueOrder::Pid),
            Some((b, "reverse")) => (b, EnqueueOrder::ReversePid),
            Some((b, "random")) => (b, EnqueueOrder::Random),
            Some((_, o)) => return Err(SimError::config(format!("unknown enqueue order '{o}'"))),
            None => (id, EnqueueOrder::Pid),
        };
        let mut parts = base.split(':');
        let head = parts.next().unwrap_or("");
        let arg = parts.next();
        let kind = match (head, arg) {
            ("greedy", None) => SchedulerKind::Greedy(Greedy { ledger: Some(CoinLedger::new(seed, processes, tau, retain_coins)) }),
            ("random-delay", Some(h)) => {
                let hook = match h {
                    "laziest" => Hook::Laziest,
                    "skew" => Hook::Skew,
                    "pile-up" => Hook::PileUp,
                    "jitter" => Hook::Jitter,
                    _ => return Err(SimError::config(format!("unknown random-delay hook '{h}'"))),
                };
                SchedulerKind::RandomDelay(RandomDelay::new(hook, seed, processes, tau, retain_coins))
            }
            ("violating", Some(w)) => {
                let from: u64 = w.parse().map_err(|_| SimError::config(format!("bad window '{w}'")))?;
                let mut rd = RandomDelay::new(Hook::Laziest, seed, processes, tau, retain_coins);
                rd.drop_from = Some(from);
                SchedulerKind::RandomDelay(rd)
            }
            ("chaos", None) => SchedulerKind::Chaos(Chaos {
                ledger: CoinLedger::new(seed, processes, tau, retain_coins),
                rng: rng::stream(seed, "chaos", 0),
            }),
            _ => return Err(SimError::config(format!("unknown scheduler '{id}'"))),
        };
        if parts.next().is_some() {
            return Err(SimError::config(format!("unknown scheduler '{id}'")));
        }
        Ok(Scheduler::new(kind, order, seed))
    }

    /// Ids of the stock schedulers that claim the random-delay property.
    pub fn compliant_ids() -> &'static [&'static str] {
        &["greedy", "random-delay:laziest", "random-delay:skew", "random-delay:pile-up", "random-delay:jitter"]
    }

    pub fn is_compliant(&self) -> bool {
        match &self.kind {
            SchedulerKind::Greedy(_) => true,
            SchedulerKind::RandomDelay(rd) => rd.drop_from.is_none(),
            SchedulerKind::Chaos(_) | SchedulerKind::Replay(_) => false,
        }
    }

    pub fn ledger(&self) -> Option<&CoinLedger> {
        match &self.kind {
            SchedulerKind::Greedy(g) => g.ledger.as_ref(),
            SchedulerKind::RandomDelay(rd) => Some(&rd.ledger),
            SchedulerKind::Chaos(c) => Some(&c.ledger),
            SchedulerKind::Replay(_) => None,
        }
    }

    /// The obligation a violating scheduler dropped.
    pub fn dropped(&self) -> Option<(Pid, u64)> {
        match &self.kind {
            SchedulerKind::RandomDelay(rd) => rd.dropped(),
            _ => None,
        }
    }

    /// Chooses the processes to run at the world's current time.
    pub fn select(&mut self, world: &World, out: &mut Vec<Pid>) -> Result<()> {
        let t = world.t();
        let mut ready = std::mem::take(&mut self.ready);
        world.ready_into(&mut ready);
        out.clear();
        let res = match &mut self.kind {
            SchedulerKind::Greedy(g) => {
                if let Some(l) = g.ledger.as_mut() {
                    l.begin_step(t)?;
                }
                out.extend_from_slice(&ready);
                Ok(())
            }
            SchedulerKind::RandomDelay(rd) => rd.select(world, &ready, out),
            SchedulerKind::Chaos(c) => {
                c.ledger.begin_step(t)?;
                out.extend(ready.iter().copied().filter(|_| c.rng.gen_bool(0.25)));
                Ok(())
            }
            SchedulerKind::Replay(r) => {
                if let Some(v) = r.steps.get(&t) {
                    out.extend_from_slice(v);
                }
                Ok(())
            }
        };
        self.ready = ready;
        res?;
        if !matches!(self.kind, SchedulerKind::Replay(_)) {
            match self.order {
                EnqueueOrder::Pid => out.sort_unstable(),
                EnqueueOrder::ReversePid => out.sort_unstable_by(|a, b| b.cmp(a)),
                EnqueueOrder::Random => {
                    out.sort_unstable();
                    out.shuffle(&mut self.order_rng);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_sum_short_interval_is_zero() {
        assert_eq!(window_sum_with(3, 10, 12, |_| true), 0);
    }

    #[test]
    fn window_sum_alignment() {
        // tau = 1, all coins 1: windows j with j in [t1, t2 - 1].
        assert_eq!(window_sum_with(1, 0, 5, |_| true), 5);
        // tau = 2, [1, 6): j tau in [1, 4] gives j = 1, 2.
        assert_eq!(window_sum_with(2, 1, 6, |_| true), 2);
        // tau = 2, [0, 5): j tau in [0, 3] gives j = 0, 1.
        assert_eq!(window_sum_with(2, 0, 5, |_| true), 2);
    }

    #[test]
    fn coins_are_drawn_in_window_order() {
        let mut l = CoinLedger::new(1, 4, 2, true);
        assert!(l.begin_step(0).unwrap());
        assert!(!l.begin_step(1).unwrap());
        assert_eq!(l.coin(0, 1), None);
        assert!(l.begin_step(2).unwrap());
        assert!(l.coin(3, 1).is_some());
        assert!(l.begin_step(6).is_err());
    }

    #[test]
    fn induced_coin_is_majority() {
        let coins = [true, false, true, false, false, true];
        assert!(induced_coin(1, 0, |i| coins[i as usize]));
        assert!(!induced_coin(1, 1, |i| coins[i as usize]));
    }

    #[test]
    fn coarsened_coin_picks_first_inner_window() {
        // tau = 2, tau2 = 5: window 1 spans [5, 10) and its first tau-window
        // start is 6, i.e. window 3.
        assert!(coarsen_coin(2, 5, 1, |j| j == 3));
    }

    #[test]
    fn scheduler_ids_parse() {
        for id in Scheduler::compliant_ids() {
            assert!(Scheduler::from_id(id, 0, 4, 1, false).unwrap().is_compliant());
        }
        assert!(!Scheduler::from_id("violating:3", 0, 4, 1, false).unwrap().is_compliant());
        assert!(!Scheduler::from_id("chaos@random", 0, 4, 1, false).unwrap().is_compliant());
        assert!(Scheduler::from_id("greedy@sideways", 0, 4, 1, false).is_err());
        assert!(Scheduler::from_id("random-delay:nope", 0, 4, 1, false).is_err());
    }
}
