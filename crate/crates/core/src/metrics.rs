//! Online analysis quantities: potential, queue lengths, psi, busy
//! intervals, health flags and latency statistics.

use std::collections::BTreeMap;
use std::io::Write;

use crate::config::SimConfig;
use crate::engine::World;
use crate::error::{Result, SimError};
use crate::history::{EventKind, History};
use crate::memory::{CellId, Label};
use crate::primitives::PrimitiveKind;
use crate::OpId;

/// Which activity definition the potential uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// Sum of invocation probabilities of operations pending on R.
    Register,
    /// As `Register`, restricted to operations whose C cell is unchanged
    /// since their S.
    Cas,
    /// No back-on loop (naive primitives).
    None,
}

impl Flavor {
    pub fn of(kind: PrimitiveKind) -> Self {
        match kind {
            PrimitiveKind::BackOnRegister => Flavor::Register,
            PrimitiveKind::BasicCas | PrimitiveKind::ImprovedCas => Flavor::Cas,
            _ => Flavor::None,
        }
    }
}

/// One-step growth bound `phi' <= phi * growth + additive`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub growth: f64,
    pub additive: f64,
}

impl GrowthBound {
    pub fn for_config(cfg: &SimConfig, flavor: Flavor) -> Option<Self> {
        let p = cfg.processes as f64;
        match flavor {
            Flavor::Register => Some(GrowthBound { growth: 1.0 + 1.0 / cfg.c as f64, additive: p.powf(1.0 - cfg.p0_exponent) }),
            Flavor::Cas => Some(GrowthBound { growth: 2.0, additive: p.powf(1.0 - cfg.cas_p0_exponent) }),
            Flavor::None => None,
        }
    }

    /// Whether `next` respects the bound from `prev`. The only slack is a
    /// bound on the floating-point error of summing `terms` probabilities,
    /// each computed by one exp2.
    pub fn holds(&self, prev: f64, next: f64, terms: usize) -> bool {
        let rhs = prev * self.growth + self.additive;
        next <= rhs * (1.0 + (2.0 * terms as f64 + 8.0) * f64::EPSILON)
    }
}

/// One row of the per-timestep metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub phi: f64,
    pub queue_c: usize,
    pub queue_w: usize,
    pub psi: u64,
    pub busy_c: bool,
    pub busy_w: bool,
    pub healthy: bool,
    pub heavily_delayed: u32,
}

/// Maximal runs of consecutive applies on one cell, tracked online.
#[derive(Debug, Clone, Default)]
pub struct BusyTracker {
    start: Option<u64>,
    pub intervals: Vec<(u64, u64)>,
}

impl BusyTracker {
    /// Feeds timestep `t`: whether a record was applied and whether the
    /// queue held records carried over from earlier steps.
    pub fn feed(&mut self, t: u64, applied: bool, carried: bool) {
        match (self.start, applied) {
            (Some(s), true) if !carried => {
                self.intervals.push((s, t));
                self.start = Some(t);
            }
            (Some(_), true) => {}
            (Some(s), false) => {
                self.intervals.push((s, t));
                self.start = None;
            }
            (None, true) => self.start = Some(t),
            (None, false) => {}
        }
    }

    /// Closes an open interval at `t`.
    pub fn finish(&mut self, t: u64) {
        if let Some(s) = self.start.take() {
            self.intervals.push((s, t));
        }
    }

    pub fn lengths(&self) -> Vec<u64> {
        self.intervals.iter().map(|&(a, b)| b - a).collect()
    }
}

/// Busy intervals of `cell` reconstructed from a full history.
pub fn detect_busy_intervals(history: &History, cell: CellId) -> Vec<(u64, u64)> {
    let mut enq: BTreeMap<u64, u64> = BTreeMap::new();
    let mut app: BTreeMap<u64, u64> = BTreeMap::new();
    for e in history.iter() {
        match e.kind {
            EventKind::Enqueue { cell: c, .. } if c == cell => *enq.entry(e.t).or_default() += 1,
            EventKind::Apply { cell: Some(c), ticket: Some(_), .. } if c == cell => *app.entry(e.t).or_default() += 1,
            _ => {}
        }
    }
    let Some(&last) = app.keys().next_back() else {
        return Vec::new();
    };
    let mut tracker = BusyTracker::default();
    let mut queued = 0u64;
    for t in 0..=last + 1 {
        let carried = queued > 0;
        queued += enq.get(&t).copied().unwrap_or(0);
        let applied = app.get(&t).copied().unwrap_or(0);
        debug_assert!(applied <= 1 && applied <= queued);
        queued -= applied;
        tracker.feed(t, applied > 0, carried);
    }
    tracker.finish(last + 2);
    tracker.intervals
}

/// Per-invocation-time latency aggregates.
#[derive(Debug, Clone, Default)]
pub struct LatencyStats {
    /// invoke time -> (completed count, max latency)
    pub by_time: BTreeMap<u64, (u64, u64)>,
    pub completed: u64,
    pub total: u128,
    pub max: u64,
    /// Operations still running at the end, by invoke time.
    pub unfinished: BTreeMap<u64, u64>,
    /// (invoke_t, op id, latency) when per-operation records are kept.
    pub records: Option<Vec<(u64, OpId, u64)>>,
}

impl LatencyStats {
    pub fn record(&mut self, invoked_at: u64, op: OpId, latency: u64) {
        let e = self.by_time.entry(invoked_at).or_insert((0, 0));
        e.0 += 1;
        e.1 = e.1.max(latency);
        self.completed += 1;
        self.total += latency as u128;
        self.max = self.max.max(latency);
        if let Some(r) = self.records.as_mut() {
            r.push((invoked_at, op, latency));
        }
    }

    pub fn mean(&self) -> f64 {
        if self.completed == 0 {
            0.0
        } else {
            self.total as f64 / self.completed as f64
        }
    }

    pub fn unfinished_count(&self) -> u64 {
        self.unfinished.values().sum()
    }

    /// Statistics over operations invoked exactly at `t`.
    pub fn report_at(&self, t: u64) -> LatencyReport {
        let (count, max) = self.by_time.get(&t).copied().unwrap_or((0, 0));
        LatencyReport { count, max, unfinished: self.unfinished.get(&t).copied().unwrap_or(0) }
    }

    /// Per invocation time, the maximum latency; `u64::MAX` when some
    /// operation invoked then never returned.
    pub fn per_time_max(&self) -> Vec<u64> {
        let mut times: BTreeMap<u64, u64> = self.by_time.iter().map(|(&t, &(_, m))| (t, m)).collect();
        for &t in self.unfinished.keys() {
            times.insert(t, u64::MAX);
        }
        times.into_values().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyReport {
    pub count: u64,
    pub max: u64,
    pub unfinished: u64,
}

/// Nearest-rank quantile `q` of `values` (sorted in place).
pub fn nearest_rank(values: &mut [u64], q: f64) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    Some(values[rank - 1])
}

/// High-probability latency estimate: the `(1 - 1/P)` nearest-rank quantile
/// of per-invocation-time maxima pooled over runs.
pub fn hp_latency(per_time_maxima: &mut [u64], processes: u32) -> Option<u64> {
    nearest_rank(per_time_maxima, 1.0 - 1.0 / processes as f64)
}

/// A violated one-step check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepViolation {
    pub t: u64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone)]
pub struct Metrics {
    pub flavor: Flavor,
    bound: Option<GrowthBound>,
    healthy_threshold: f64,
    delayed_age: f64,
    c_cell: CellId,
    w_cell: Option<CellId>,
    pub rows: Option<Vec<MetricsRow>>,
    pub last: Option<MetricsRow>,
    pub growth_violation: Option<StepViolation>,
    pub growth_checks: u64,
    pub psi_mismatch: Option<u64>,
    /// Steps at which psi rose while W was busy.
    pub psi_rise_in_busy: u64,
    pub max_queue_c: usize,
    pub max_queue_w: usize,
    /// First time the peak C queue reached `blowup_threshold`.
    pub blowup_threshold: usize,
    pub first_blowup: Option<u64>,
    pub max_phi: f64,
    pub heavily_delayed_total: u64,
    pub busy_c: BusyTracker,
    pub busy_w: BusyTracker,
    pub latency: LatencyStats,
}

impl Metrics {
    pub fn new(world: &World, keep_rows: bool, keep_latency_records: bool) -> Self {
        let prim = world.object.primitive();
        let flavor = Flavor::of(prim.kind);
        let cfg = &world.cfg;
        Metrics {
            flavor,
            bound: GrowthBound::for_config(cfg, flavor),
            healthy_threshold: cfg.healthy_threshold(),
            delayed_age: cfg.heavily_delayed_age(),
            c_cell: prim.cell,
            w_cell: prim.w_cell,
            rows: keep_rows.then(Vec::new),
            last: None,
            growth_violation: None,
            growth_checks: 0,
            psi_mismatch: None,
            psi_rise_in_busy: 0,
            max_queue_c: 0,
            max_queue_w: 0,
            blowup_threshold: (cfg.processes as usize).div_ceil(2).max(1),
            first_blowup: None,
            max_phi: 0.0,
            heavily_delayed_total: 0,
            busy_c: BusyTracker::default(),
            busy_w: BusyTracker::default(),
            latency: LatencyStats { records: keep_latency_records.then(Vec::new), ..Default::default() },
        }
    }

    /// Samples the state after the step the world just executed.
    pub fn observe(&mut self, world: &World) {
        let s = world.summary();
        let t = s.t;
        for c in world.completions() {
            self.latency.record(c.invoked_at, c.op, c.latency());
        }

        let c_version = world.mem.cells[self.c_cell as usize].version;
        let mut phi = 0.0;
        let mut terms = 0usize;
        let mut pending_c = 0u64;
        let mut pending_w = 0u64;
        let mut delayed = 0u32;
        let now = t + 1;
        for proc in world.procs() {
            let Some(op) = proc.op.as_ref() else { continue };
            let probe = op.machine.probe(&world.object);
            match probe.label {
                Label::R => {
                    let active = match self.flavor {
                        Flavor::Register => true,
                        Flavor::Cas => op.s_version == Some(c_version),
                        Flavor::None => false,
                    };
                    if active {
                        if let Some(p) = probe.invocation_prob {
                            phi += p;
                            terms += 1;
                        }
                    }
                    if let Some(st) = op.s_time {
                        if (now - st) as f64 > self.delayed_age {
                            delayed += 1;
                        }
                    }
                }
                Label::C if !proc.waiting => pending_c += 1,
                Label::WPrime if !proc.waiting => pending_w += 1,
                _ => {}
            }
        }

        let queue_c = world.mem.queue_len(self.c_cell);
        let queue_w = self.w_cell.map_or(0, |w| world.mem.queue_len(w));
        let applied_c = s.applies.iter().any(|a| a.cell == self.c_cell);
        let applied_w = self.w_cell.is_some_and(|w| s.applies.iter().any(|a| a.cell == w));
        let peak_c = queue_c + applied_c as usize;
        let peak_w = queue_w + applied_w as usize;
        self.max_queue_c = self.max_queue_c.max(peak_c);
        self.max_queue_w = self.max_queue_w.max(peak_w);
        if self.first_blowup.is_none() && peak_c >= self.blowup_threshold {
            self.first_blowup = Some(t);
        }
        self.busy_c.feed(t, applied_c, s.queue_at_start[self.c_cell as usize] > 0);
        if let Some(w) = self.w_cell {
            self.busy_w.feed(t, applied_w, s.queue_at_start[w as usize] > 0);
        }

        let psi = queue_w as u64 + pending_w;
        let (prev_phi, prev_psi, prev_busy_w) = self.last.map_or((0.0, 0, false), |r| (r.phi, r.psi, r.busy_w));
        let w_applies = self.w_cell.map_or(0, |w| s.applies.iter().filter(|a| a.cell == w).count()) as i64;
        if prev_psi as i64 + s.w_prime_entries as i64 - w_applies != psi as i64 && self.psi_mismatch.is_none() {
            self.psi_mismatch = Some(t);
        }
        if psi > prev_psi && prev_busy_w && applied_w {
            self.psi_rise_in_busy += 1;
        }
        if let Some(b) = self.bound {
            self.growth_checks += 1;
            if !b.holds(prev_phi, phi, terms) && self.growth_violation.is_none() {
                self.growth_violation = Some(StepViolation { t, before: prev_phi, after: phi });
            }
        }

        let awaiting_cas = pending_c > 0 || queue_c > 0;
        let row = MetricsRow {
            t: now,
            phi,
            queue_c,
            queue_w,
            psi,
            busy_c: applied_c,
            busy_w: applied_w,
            healthy: !awaiting_cas && phi <= self.healthy_threshold,
            heavily_delayed: delayed,
        };
        self.max_phi = self.max_phi.max(phi);
        self.heavily_delayed_total += delayed as u64;
        if let Some(rows) = self.rows.as_mut() {
            rows.push(row);
        }
        self.last = Some(row);
    }

    /// Closes open busy intervals and records unfinished operations.
    pub fn finish(&mut self, world: &World) {
        let t = world.t();
        self.busy_c.finish(t);
        self.busy_w.finish(t);
        self.latency.unfinished.clear();
        for proc in world.procs() {
            if let Some(op) = proc.op.as_ref() {
                *self.latency.unfinished.entry(op.invoked_at).or_default() += 1;
            }
        }
    }

    pub fn growth_ok(&self) -> bool {
        self.growth_violation.is_none()
    }

    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self.rows.as_ref().ok_or_else(|| SimError::config("metrics rows were not retained"))?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "phi", "queue_C", "queue_W", "psi", "busy_C", "busy_W", "healthy", "heavily_delayed_count"])?;
        for r in rows {
            wr.write_record(&[
                r.t.to_string(),
                format!("{:e}", r.phi),
                r.queue_c.to_string(),
                r.queue_w.to_string(),
                r.psi.to_string(),
                (r.busy_c as u8).to_string(),
                (r.busy_w as u8).to_string(),
                (r.healthy as u8).to_string(),
                r.heavily_delayed.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_quantiles() {
        let mut v = vec![5, 1, 4, 2, 3];
        assert_eq!(nearest_rank(&mut v, 0.5), Some(3));
        assert_eq!(nearest_rank(&mut v, 1.0), Some(5));
        assert_eq!(nearest_rank(&mut v, 0.0), Some(1));
        assert_eq!(nearest_rank(&mut [], 0.5), None);
    }

    #[test]
    fn busy_tracker_splits_on_empty_queue() {
        let mut b = BusyTracker::default();
        // applies at 0,1,2 with carry at 1,2; fresh apply at 3; idle at 4.
        b.feed(0, true, false);
        b.feed(1, true, true);
        b.feed(2, true, true);
        b.feed(3, true, false);
        b.feed(4, false, false);
        assert_eq!(b.intervals, vec![(0, 3), (3, 4)]);
    }

    #[test]
    fn growth_bound_slack_is_rounding_only() {
        let b = GrowthBound { growth: 1.25, additive: 0.0 };
        assert!(b.holds(1.0, 1.25, 1));
        assert!(!b.holds(1.0, 1.25 * (1.0 + 1e-9), 1));
    }
}
