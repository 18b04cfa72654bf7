//! Linearizability checking.
//!
//! Two rule-based linearizers assign each primitive-level operation a point
//! derived from its instruction applies and replay the resulting order
//! against the sequential object. A brute-force search over real-time
//! respecting orders serves as an oracle for small histories.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::error::{Result, SimError};
use crate::history::{EventKind, History};
use crate::memory::{CellId, InstrKind, Label, Word};
use crate::object::ObjectKind;
use crate::ops::{OpResult, OpSpec};
use crate::primitives::Primitive;
use crate::{OpId, Pid};

/// An instruction apply attributed to an operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchor {
    /// Position of the apply event in the history.
    pub idx: usize,
    pub t: u64,
    pub label: Label,
    pub instr: InstrKind,
    pub cell: CellId,
    pub returned: u64,
    pub post: Option<Word>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub id: OpId,
    pub pid: Pid,
    pub spec: OpSpec,
    pub parent: Option<OpId>,
    pub result: Option<OpResult>,
    pub invoke_t: u64,
    pub return_t: Option<u64>,
    pub anchors: Vec<Anchor>,
}

impl OpRecord {
    pub fn is_complete(&self) -> bool {
        self.return_t.is_some()
    }
}

/// Operations of a history with their anchor events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompletedHistory {
    pub ops: Vec<OpRecord>,
}

impl CompletedHistory {
    pub fn from_history(h: &History) -> Self {
        let mut ops: Vec<OpRecord> = Vec::new();
        let mut index: HashMap<OpId, usize> = HashMap::new();
        for (i, e) in h.iter().enumerate() {
            match e.kind {
                EventKind::OpInvoke { spec, parent } => {
                    index.insert(e.op, ops.len());
                    ops.push(OpRecord {
                        id: e.op,
                        pid: e.pid,
                        spec,
                        parent,
                        result: None,
                        invoke_t: e.t,
                        return_t: None,
                        anchors: Vec::new(),
                    });
                }
                EventKind::OpReturn { result, .. } => {
                    if let Some(&k) = index.get(&e.op) {
                        ops[k].result = Some(result);
                        ops[k].return_t = Some(e.t);
                    }
                }
                EventKind::Apply { instr, label, cell: Some(cell), returned, post, .. } => {
                    if let Some(&k) = index.get(&e.op) {
                        ops[k].anchors.push(Anchor { idx: i, t: e.t, label, instr, cell, returned, post });
                    }
                }
                _ => {}
            }
        }
        CompletedHistory { ops }
    }

    /// Operations without a parent.
    pub fn top_level(&self) -> impl Iterator<Item = &OpRecord> {
        self.ops.iter().filter(|o| o.parent.is_none())
    }
}

/// Sequential semantics of the stock objects over a single word state.
pub fn seq_apply(kind: ObjectKind, state: u64, spec: OpSpec) -> (u64, OpResult) {
    match (kind, spec) {
        (_, OpSpec::Read) => (state, OpResult::Value(state)),
        (_, OpSpec::Write(x)) => (x, OpResult::Unit),
        (_, OpSpec::Cas { expected, new }) => {
            if state == expected {
                (new, OpResult::Bool(true))
            } else {
                (state, OpResult::Bool(false))
            }
        }
        (_, OpSpec::FetchInc) => (state.wrapping_add(1), OpResult::Value(state)),
        (_, OpSpec::Set) => (state.max(1), OpResult::Unit),
    }
}

/// A linearization point: ordered by (time, event index, slot); slot 0 is
/// "immediately before" the anchor event, slot 1 the event itself. Time -1
/// stands for the initialization update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Point {
    pub t: i64,
    pub idx: i64,
    pub slot: u8,
    pub op: OpId,
}

impl Point {
    fn at(a: &Anchor, op: OpId) -> Self {
        Point { t: a.t as i64, idx: a.idx as i64, slot: 1, op }
    }

    fn before(a: &Anchor, op: OpId) -> Self {
        Point { t: a.t as i64, idx: a.idx as i64, slot: 0, op }
    }

    fn init(op: OpId) -> Self {
        Point { t: -1, idx: -1, slot: 0, op }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinFailure {
    pub op: Option<OpId>,
    pub msg: String,
}

impl fmt::Display for LinFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            Some(op) => write!(f, "operation {op}: {}", self.msg),
            None => write!(f, "{}", self.msg),
        }
    }
}

fn fail<T>(op: Option<OpId>, msg: impl Into<String>) -> std::result::Result<T, LinFailure> {
    Err(LinFailure { op, msg: msg.into() })
}

pub type Linearization = Vec<(Point, OpId)>;

/// Orders the points, checks each lies within its operation's interval and
/// replays the order against the sequential object.
fn replay(
    h: &CompletedHistory,
    kind: ObjectKind,
    mut points: Vec<Point>,
    init: u64,
) -> std::result::Result<Linearization, LinFailure> {
    points.sort();
    let by_id: HashMap<OpId, &OpRecord> = h.ops.iter().map(|o| (o.id, o)).collect();
    let mut state = init;
    let mut out = Vec::with_capacity(points.len());
    for pt in points {
        let op = by_id[&pt.op];
        if pt.t < op.invoke_t as i64 {
            return fail(Some(op.id), format!("linearized at t={} before its invocation at t={}", pt.t, op.invoke_t));
        }
        if let Some(r) = op.return_t {
            if pt.t >= r as i64 {
                return fail(Some(op.id), format!("linearized at t={} after its return at t={r}", pt.t));
            }
        }
        let (next, res) = seq_apply(kind, state, op.spec);
        if let Some(actual) = op.result {
            if actual != res {
                return fail(Some(op.id), format!("{} returned {actual} but the sequential object gives {res} (state {state})", op.spec));
            }
        }
        state = next;
        out.push((pt, op.id));
    }
    Ok(out)
}

/// Operations of the primitive at `cell`, skipping composed parents.
fn ops_on_cell(h: &CompletedHistory, cell: CellId) -> impl Iterator<Item = &OpRecord> {
    h.ops.iter().filter(move |o| o.anchors.iter().any(|a| a.cell == cell))
}

/// Linearizes a register history (back-on or naive writes).
///
/// Reads sit at their Load; writes whose store applied sit at that apply;
/// a write that returned after seeing the fingerprint change sits
/// immediately before the earliest store applied between its S and the R
/// that noticed the change.
pub fn linearize_register(h: &CompletedHistory, prim: &Primitive) -> std::result::Result<Linearization, LinFailure> {
    let cell = prim.cell;
    let mut stores: Vec<&Anchor> = ops_on_cell(h, cell)
        .flat_map(|o| o.anchors.iter())
        .filter(|a| a.cell == cell && matches!(a.instr, InstrKind::StoreRandom | InstrKind::Store))
        .collect();
    stores.sort_by_key(|a| a.idx);
    let mut points = Vec::new();
    for op in ops_on_cell(h, cell) {
        let mine: Vec<&Anchor> = op.anchors.iter().filter(|a| a.cell == cell).collect();
        match op.spec {
            OpSpec::Read => {
                if !op.is_complete() {
                    continue;
                }
                let a = mine.iter().find(|a| a.label == Label::Read);
                match a {
                    Some(a) => points.push(Point::at(a, op.id)),
                    None => return fail(Some(op.id), "read without a Load"),
                }
            }
            OpSpec::Write(_) => {
                if let Some(w) = mine.iter().find(|a| matches!(a.instr, InstrKind::StoreRandom | InstrKind::Store)) {
                    points.push(Point::at(w, op.id));
                    continue;
                }
                if !op.is_complete() {
                    continue;
                }
                let s = mine.iter().find(|a| a.label == Label::S).ok_or_else(|| LinFailure {
                    op: Some(op.id),
                    msg: "aborted write without S".into(),
                })?;
                let r = mine.last().filter(|a| a.label == Label::R).ok_or_else(|| LinFailure {
                    op: Some(op.id),
                    msg: "aborted write did not end on R".into(),
                })?;
                let q = stores.iter().find(|a| a.t >= s.t && a.t < r.t);
                match q {
                    Some(q) => points.push(Point::before(q, op.id)),
                    None => return fail(Some(op.id), format!("no store applied in [{}, {}) explains the abort", s.t, r.t)),
                }
            }
            other => return fail(Some(op.id), format!("{other} on a register")),
        }
    }
    replay(h, ObjectKind::Register, points, 0)
}

/// Linearizes a CAS-register history (BasicCAS, ImprovedCAS or naive).
///
/// Five cases for back-on operations: returns decided at S sit at S; a
/// value change seen by R sits at that R; a hardware CAS that succeeded, or
/// failed on the value, sits at its apply; a fingerprint-only mismatch
/// (seen by R or by a failed CAS) sits immediately before the last
/// successful CAS applied before the observation, or before everything if
/// that is the initialization.
pub fn linearize_cas(h: &CompletedHistory, prim: &Primitive) -> std::result::Result<Linearization, LinFailure> {
    let cell = prim.cell;
    let mut successes: Vec<&Anchor> = ops_on_cell(h, cell)
        .flat_map(|o| o.anchors.iter())
        .filter(|a| a.cell == cell && a.instr == InstrKind::Cas && a.returned == 1)
        .collect();
    successes.sort_by_key(|a| a.idx);
    let last_success_before = |idx: usize| successes.iter().rev().find(|a| a.idx < idx).copied();
    let x_of = |w: u64| prim.value_of(Word(w));
    let mut points = Vec::new();
    for op in ops_on_cell(h, cell) {
        let mine: Vec<&Anchor> = op.anchors.iter().filter(|a| a.cell == cell).collect();
        let cas = mine.iter().find(|a| a.instr == InstrKind::Cas);
        if let Some(c) = cas {
            if c.returned == 1 {
                points.push(Point::at(c, op.id));
                continue;
            }
        }
        if !op.is_complete() {
            continue;
        }
        match op.spec {
            OpSpec::Read => match mine.iter().find(|a| a.label == Label::Read) {
                Some(a) => points.push(Point::at(a, op.id)),
                None => return fail(Some(op.id), "read without a Load"),
            },
            OpSpec::Cas { .. } => {
                if prim.kind.is_naive() {
                    match cas {
                        Some(c) => points.push(Point::at(c, op.id)),
                        None => return fail(Some(op.id), "naive CAS without apply"),
                    }
                    continue;
                }
                let s = mine.iter().find(|a| a.label == Label::S).ok_or_else(|| LinFailure {
                    op: Some(op.id),
                    msg: "CAS without S".into(),
                })?;
                let x_old = x_of(s.returned);
                let observation: &Anchor = match cas {
                    Some(c) => c,
                    None => match mine.iter().rev().find(|a| a.label == Label::R) {
                        Some(r) if r.returned != s.returned => r,
                        _ => {
                            points.push(Point::at(s, op.id));
                            continue;
                        }
                    },
                };
                let seen = match observation.instr {
                    InstrKind::Cas => observation.post.map(|w| w.0).unwrap_or(observation.returned),
                    _ => observation.returned,
                };
                if x_of(seen) != x_old {
                    points.push(Point::at(observation, op.id));
                } else {
                    match last_success_before(observation.idx) {
                        Some(q) => points.push(Point::before(q, op.id)),
                        None => points.push(Point::init(op.id)),
                    }
                }
            }
            other => return fail(Some(op.id), format!("{other} on a CAS register")),
        }
    }
    replay(h, ObjectKind::CasRegister, points, 0)
}

/// Runs the linearizer matching the primitive behind `prim`.
pub fn linearize(h: &CompletedHistory, prim: &Primitive) -> std::result::Result<Linearization, LinFailure> {
    if prim.kind.is_cas() {
        linearize_cas(h, prim)
    } else {
        linearize_register(h, prim)
    }
}

/// Input to the brute-force oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleOp {
    pub spec: OpSpec,
    /// None for pending operations.
    pub result: Option<OpResult>,
    pub invoke_t: u64,
    pub return_t: Option<u64>,
    /// A pending operation that must take effect.
    pub required: bool,
}

pub const ORACLE_CAP: usize = 10;

/// Whether some real-time respecting order of the operations replays
/// correctly. Completed operations and required pending ones must appear;
/// other pending operations may be left out. Refuses more than
/// [`ORACLE_CAP`] operations.
pub fn brute_force_linearizable(ops: &[OracleOp], kind: ObjectKind, init: u64) -> Result<bool> {
    if ops.len() > ORACLE_CAP {
        return Err(SimError::SizeCap(format!("{} operations exceed the oracle cap of {ORACLE_CAP}", ops.len())));
    }
    let n = ops.len();
    let mut preds = vec![0u16; n];
    for (b, ob) in ops.iter().enumerate() {
        for (a, oa) in ops.iter().enumerate() {
            if a != b && oa.return_t.is_some_and(|r| r <= ob.invoke_t) {
                preds[b] |= 1 << a;
            }
        }
    }
    let must: u16 = ops
        .iter()
        .enumerate()
        .filter(|(_, o)| o.return_t.is_some() || o.required)
        .fold(0, |m, (i, _)| m | (1 << i));
    let mut dead: HashSet<(u16, u64)> = HashSet::new();
    Ok(search(ops, kind, &preds, must, 0, init, &mut dead))
}

fn search(ops: &[OracleOp], kind: ObjectKind, preds: &[u16], must: u16, done: u16, state: u64, dead: &mut HashSet<(u16, u64)>) -> bool {
    if done & must == must {
        return true;
    }
    if dead.contains(&(done, state)) {
        return false;
    }
    for i in 0..ops.len() {
        let bit = 1u16 << i;
        if done & bit != 0 || preds[i] & !done != 0 {
            continue;
        }
        let (next, res) = seq_apply(kind, state, ops[i].spec);
        if ops[i].result.is_some_and(|r| r != res) {
            continue;
        }
        if search(ops, kind, preds, must, done | bit, next, dead) {
            return true;
        }
    }
    dead.insert((done, state));
    false
}

/// Oracle input for the operations of `h` matching `filter`. Pending
/// operations that applied a successful hardware CAS are required, with
/// result true.
pub fn oracle_ops<'a>(h: &'a CompletedHistory, filter: impl Fn(&OpRecord) -> bool + 'a) -> Vec<OracleOp> {
    h.ops
        .iter()
        .filter(|o| filter(o))
        .map(|o| {
            let required = o.return_t.is_none() && o.anchors.iter().any(|a| a.instr == InstrKind::Cas && a.returned == 1);
            OracleOp {
                spec: o.spec,
                result: if required { Some(OpResult::Bool(true)) } else { o.result },
                invoke_t: o.invoke_t,
                return_t: o.return_t,
                required,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(spec: OpSpec, result: Option<OpResult>, inv: u64, ret: Option<u64>) -> OracleOp {
        OracleOp { spec, result, invoke_t: inv, return_t: ret, required: false }
    }

    #[test]
    fn two_overlapping_cas_one_wins() {
        let c = OpSpec::Cas { expected: 0, new: 1 };
        let ops = [op(c, Some(OpResult::Bool(true)), 0, Some(5)), op(c, Some(OpResult::Bool(false)), 0, Some(6))];
        assert!(brute_force_linearizable(&ops, ObjectKind::CasRegister, 0).unwrap());
    }

    #[test]
    fn two_winning_cas_are_impossible() {
        let c = OpSpec::Cas { expected: 0, new: 1 };
        let ops = [op(c, Some(OpResult::Bool(true)), 0, Some(5)), op(c, Some(OpResult::Bool(true)), 0, Some(6))];
        assert!(!brute_force_linearizable(&ops, ObjectKind::CasRegister, 0).unwrap());
    }

    #[test]
    fn real_time_order_is_respected() {
        // Write(1) finishes before a Read that returns the initial 0.
        let ops = [op(OpSpec::Write(1), Some(OpResult::Unit), 0, Some(2)), op(OpSpec::Read, Some(OpResult::Value(0)), 3, Some(4))];
        assert!(!brute_force_linearizable(&ops, ObjectKind::Register, 0).unwrap());
        // Overlapping, it is fine.
        let ops = [op(OpSpec::Write(1), Some(OpResult::Unit), 0, Some(4)), op(OpSpec::Read, Some(OpResult::Value(0)), 3, Some(4))];
        assert!(brute_force_linearizable(&ops, ObjectKind::Register, 0).unwrap());
    }

    #[test]
    fn pending_operations_are_optional_unless_required() {
        let w = op(OpSpec::Write(1), None, 0, None);
        let r = op(OpSpec::Read, Some(OpResult::Value(0)), 5, Some(6));
        assert!(brute_force_linearizable(&[w, r], ObjectKind::Register, 0).unwrap());
        let r1 = op(OpSpec::Read, Some(OpResult::Value(1)), 5, Some(6));
        assert!(brute_force_linearizable(&[w, r1], ObjectKind::Register, 0).unwrap());
        let c = OracleOp { required: true, ..op(OpSpec::Cas { expected: 0, new: 1 }, Some(OpResult::Bool(true)), 0, None) };
        assert!(brute_force_linearizable(&[c, r], ObjectKind::CasRegister, 0).unwrap());
        let winner = op(OpSpec::Cas { expected: 0, new: 1 }, Some(OpResult::Bool(true)), 0, Some(3));
        assert!(!brute_force_linearizable(&[c, winner], ObjectKind::CasRegister, 0).unwrap());
        let loose = OracleOp { required: false, ..c };
        assert!(brute_force_linearizable(&[loose, winner], ObjectKind::CasRegister, 0).unwrap());
    }

    #[test]
    fn oracle_refuses_large_histories() {
        let ops = vec![op(OpSpec::Read, Some(OpResult::Value(0)), 0, Some(1)); ORACLE_CAP + 1];
        assert!(matches!(brute_force_linearizable(&ops, ObjectKind::Register, 0), Err(SimError::SizeCap(_))));
    }

    #[test]
    fn counter_spec() {
        let f = OpSpec::FetchInc;
        let ops = [op(f, Some(OpResult::Value(1)), 0, Some(9)), op(f, Some(OpResult::Value(0)), 0, Some(9))];
        assert!(brute_force_linearizable(&ops, ObjectKind::Counter, 0).unwrap());
        let ops = [op(f, Some(OpResult::Value(0)), 0, Some(9)), op(f, Some(OpResult::Value(0)), 0, Some(9))];
        assert!(!brute_force_linearizable(&ops, ObjectKind::Counter, 0).unwrap());
    }
}
