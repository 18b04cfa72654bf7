//! The append-only event log and its CSV form.
//!
//! CSV columns: `t, event_kind, process, operation, cell, queue_pos, value, returned`.
//!
//! | event_kind                  | cell | queue_pos | value                | returned        |
//! |-----------------------------|------|-----------|----------------------|-----------------|
//! | `op_invoke/<spec>`          |      |           | parent op id or empty|                 |
//! | `op_return`                 |      |           | parent op id or empty| op result       |
//! | `invoke/<Instr>/<Label>`    | yes* |           |                      |                 |
//! | `enqueue`                   | yes  | ticket    | queue length after   |                 |
//! | `apply/<Instr>/<Label>`     | yes* | ticket**  | cell value after     | instruction ret |
//!
//! `*` empty for Nop/Local. `**` only for queued (state-changing) instructions.
//! A StoreRandom's sampled value first appears in its apply row.

use std::io::{Read, Write};

use crate::error::{Result, SimError};
use crate::memory::{CellId, InstrKind, Label, Word};
use crate::ops::{OpResult, OpSpec};
use crate::{OpId, Pid};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    OpInvoke { spec: OpSpec, parent: Option<OpId> },
    OpReturn { result: OpResult, parent: Option<OpId> },
    Invoke { instr: InstrKind, label: Label, cell: Option<CellId> },
    Enqueue { cell: CellId, ticket: u64, queue_len: u32 },
    Apply { instr: InstrKind, label: Label, cell: Option<CellId>, ticket: Option<u64>, returned: u64, post: Option<Word> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub t: u64,
    pub pid: Pid,
    pub op: OpId,
    pub kind: EventKind,
}

/// Full event history of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    pub events: Vec<Event>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ev: Event) {
        self.events.push(ev);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }

    /// Shared-memory apply events only (Load/Store/Cas/StoreRandom).
    pub fn memory_applies(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Apply { cell: Some(_), .. }))
    }

    /// Last timestep mentioned in the log (0 when empty).
    pub fn last_t(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "event_kind", "process", "operation", "cell", "queue_pos", "value", "returned"])?;
        for ev in &self.events {
            wr.write_record(event_row(ev))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut h = History::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            h.push(parse_row(&rec).map_err(|msg| SimError::TraceParse { line: i + 2, msg })?);
        }
        Ok(h)
    }
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn event_row(ev: &Event) -> [String; 8] {
    let (kind, cell, qpos, value, returned) = match &ev.kind {
        EventKind::OpInvoke { spec, parent } => (format!("op_invoke/{spec}"), String::new(), String::new(), opt(*parent), String::new()),
        EventKind::OpReturn { result, parent } => ("op_return".to_string(), String::new(), String::new(), opt(*parent), result.to_string()),
        EventKind::Invoke { instr, label, cell } => (
            format!("invoke/{}/{}", instr.as_str(), label.as_str()),
            opt(*cell),
            String::new(),
            String::new(),
            String::new(),
        ),
        EventKind::Enqueue { cell, ticket, queue_len } => {
            ("enqueue".to_string(), cell.to_string(), ticket.to_string(), queue_len.to_string(), String::new())
        }
        EventKind::Apply { instr, label, cell, ticket, returned, post } => (
            format!("apply/{}/{}", instr.as_str(), label.as_str()),
            opt(*cell),
            opt(*ticket),
            opt(post.map(|w| w.0)),
            returned.to_string(),
        ),
    };
    [ev.t.to_string(), kind, ev.pid.to_string(), ev.op.to_string(), cell, qpos, value, returned]
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<Event, String> {
    if rec.len() != 8 {
        return Err(format!("expected 8 columns, found {}", rec.len()));
    }
    let num = |i: usize| -> std::result::Result<u64, String> { rec[i].parse::<u64>().map_err(|_| format!("column {i}: bad integer '{}'", &rec[i])) };
    let opt_num = |i: usize| -> std::result::Result<Option<u64>, String> {
        if rec[i].is_empty() {
            Ok(None)
        } else {
            num(i).map(Some)
        }
    };
    let t = num(0)?;
    let pid = num(2)? as Pid;
    let op = num(3)? as OpId;
    let kind_s = &rec[1];
    let mut parts = kind_s.splitn(3, '/');
    let head = parts.next().unwrap_or("");
    let kind = match head {
        "op_invoke" => {
            let spec: OpSpec = parts.next().ok_or("missing op spec")?.parse().map_err(|e: SimError| e.to_string())?;
            EventKind::OpInvoke { spec, parent: opt_num(6)?.map(|p| p as OpId) }
        }
        "op_return" => {
            let result: OpResult = rec[7].parse().map_err(|e: SimError| e.to_string())?;
            EventKind::OpReturn { result, parent: opt_num(6)?.map(|p| p as OpId) }
        }
        "invoke" | "apply" => {
            let instr = parts.next().and_then(InstrKind::parse).ok_or("bad instruction kind")?;
            let label = parts.next().and_then(Label::parse).ok_or("bad label")?;
            let cell = opt_num(4)?.map(|c| c as CellId);
            if head == "invoke" {
                EventKind::Invoke { instr, label, cell }
            } else {
                EventKind::Apply { instr, label, cell, ticket: opt_num(5)?, returned: num(7)?, post: opt_num(6)?.map(Word) }
            }
        }
        "enqueue" => EventKind::Enqueue { cell: num(4)? as CellId, ticket: num(5)?, queue_len: num(6)? as u32 },
        _ => return Err(format!("unknown event kind '{kind_s}'")),
    };
    Ok(Event { t, pid, op, kind })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_of_each_kind() {
        let mut h = History::new();
        h.push(Event { t: 0, pid: 1, op: 0, kind: EventKind::OpInvoke { spec: OpSpec::Cas { expected: 1, new: 2 }, parent: None } });
        h.push(Event { t: 0, pid: 1, op: 0, kind: EventKind::Invoke { instr: InstrKind::Cas, label: Label::C, cell: Some(0) } });
        h.push(Event { t: 0, pid: 1, op: 0, kind: EventKind::Enqueue { cell: 0, ticket: 0, queue_len: 1 } });
        h.push(Event {
            t: 0,
            pid: 1,
            op: 0,
            kind: EventKind::Apply { instr: InstrKind::Cas, label: Label::C, cell: Some(0), ticket: Some(0), returned: 1, post: Some(Word(2)) },
        });
        h.push(Event {
            t: 1,
            pid: 1,
            op: 0,
            kind: EventKind::Apply { instr: InstrKind::Nop, label: Label::Wait, cell: None, ticket: None, returned: 0, post: None },
        });
        h.push(Event { t: 1, pid: 1, op: 0, kind: EventKind::OpReturn { result: OpResult::Bool(true), parent: Some(4) } });
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let back = History::read_csv(&buf[..]).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn parse_errors_carry_line() {
        let text = "t,event_kind,process,operation,cell,queue_pos,value,returned\n0,bogus,0,0,,,,\n";
        match History::read_csv(text.as_bytes()) {
            Err(SimError::TraceParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
