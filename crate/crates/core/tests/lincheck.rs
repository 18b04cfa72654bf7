mod common;

use common::{all_at_zero, replay, Run};
use crqw::history::{EventKind, History};
use crqw::lincheck::{brute_force_linearizable, linearize, oracle_ops, CompletedHistory};
use crqw::memory::Label;
use crqw::object::ObjectKind;
use crqw::ops::{OpResult, OpSpec};
use crqw::primitives::PrimitiveKind;
use crqw::SimConfig;

fn check(run: &Run) -> Result<Vec<u64>, String> {
    let ch = CompletedHistory::from_history(&run.history);
    linearize(&ch, run.world.object.primitive()).map(|lin| lin.into_iter().map(|(_, op)| op).collect()).map_err(|e| e.to_string())
}

#[test]
fn read_after_write_sees_it_and_is_ordered_after() {
    let cfg = SimConfig::default().with_processes(2);
    let run = replay(&cfg, PrimitiveKind::BackOnRegister, "greedy", vec![(0, 0, OpSpec::Write(7)), (10, 1, OpSpec::Read)], 100);
    let read = run.completions.iter().find(|c| c.spec == OpSpec::Read).unwrap();
    assert_eq!(read.result, OpResult::Value(7));
    let write = run.completions.iter().find(|c| c.spec == OpSpec::Write(7)).unwrap();
    let order = check(&run).unwrap();
    let pos = |op| order.iter().position(|&o| o == op).unwrap();
    assert!(pos(write.op) < pos(read.op));
}

#[test]
fn cas_decided_at_s_linearizes_at_s() {
    for prim in [PrimitiveKind::BasicCas, PrimitiveKind::ImprovedCas] {
        let cfg = SimConfig::default().with_processes(1);
        let spec = OpSpec::Cas { expected: 0, new: 0 };
        let run = replay(&cfg, prim, "greedy", vec![(0, 0, spec)], 1000);
        assert_eq!(run.completions[0].result, OpResult::Bool(true));
        let ch = CompletedHistory::from_history(&run.history);
        let lin = linearize(&ch, run.world.object.primitive()).unwrap();
        let (pt, op) = lin[0];
        let rec = ch.ops.iter().find(|o| o.id == op).unwrap();
        let s = rec.anchors.iter().find(|a| a.label == Label::S).unwrap();
        assert_eq!((pt.t, pt.idx), (s.t as i64, s.idx as i64), "{prim:?}");
    }
}

#[test]
fn concurrent_flood_histories_linearize() {
    for prim in [PrimitiveKind::NaiveCas, PrimitiveKind::BasicCas, PrimitiveKind::ImprovedCas] {
        for seed in 0..5 {
            let cfg = SimConfig::default().with_processes(8).with_seed(seed);
            let run = replay(&cfg, prim, "random-delay:jitter", all_at_zero(8, |p| OpSpec::Cas { expected: 0, new: p as u64 + 1 }), 100_000);
            let winners = run.completions.iter().filter(|c| c.result == OpResult::Bool(true)).count();
            assert_eq!(winners, 1, "{prim:?} seed {seed}");
            check(&run).unwrap();
        }
    }
}

fn tamper_first_read(h: &History, value: u64) -> History {
    let mut h = h.clone();
    let reads: Vec<_> = h.iter().filter(|e| matches!(e.kind, EventKind::OpInvoke { spec: OpSpec::Read, .. })).map(|e| e.op).collect();
    let ev = h
        .events
        .iter_mut()
        .find(|e| reads.contains(&e.op) && matches!(e.kind, EventKind::OpReturn { .. }))
        .expect("a completed read");
    if let EventKind::OpReturn { result, .. } = &mut ev.kind {
        *result = OpResult::Value(value);
    }
    h
}

#[test]
fn corrupted_read_result_is_rejected() {
    let cfg = SimConfig::default().with_processes(3);
    let inv = vec![(0, 0, OpSpec::Write(5)), (0, 1, OpSpec::Write(6)), (20, 2, OpSpec::Read)];
    let run = replay(&cfg, PrimitiveKind::BackOnRegister, "greedy", inv, 200);
    check(&run).unwrap();
    let bad = tamper_first_read(&run.history, 99);
    let ch = CompletedHistory::from_history(&bad);
    assert!(linearize(&ch, run.world.object.primitive()).is_err());
    let ops = oracle_ops(&ch, |o| o.parent.is_none());
    assert!(!brute_force_linearizable(&ops, ObjectKind::Register, 0).unwrap());
}

#[test]
fn oracle_refuses_large_inputs() {
    let cfg = SimConfig::default().with_processes(11);
    let run = replay(&cfg, PrimitiveKind::NaiveRegister, "greedy", all_at_zero(11, |_| OpSpec::Read), 100);
    let ops = oracle_ops(&CompletedHistory::from_history(&run.history), |_| true);
    assert!(brute_force_linearizable(&ops, ObjectKind::Register, 0).is_err());
}

#[test]
fn trace_csv_round_trips() {
    let cfg = SimConfig::default().with_processes(4).with_seed(3);
    let run = replay(&cfg, PrimitiveKind::ImprovedCas, "random-delay:skew", all_at_zero(4, |p| OpSpec::Cas { expected: 0, new: p as u64 }), 10_000);
    let mut buf = Vec::new();
    run.history.write_csv(&mut buf).unwrap();
    let back = History::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, run.history);
    let ch = CompletedHistory::from_history(&back);
    assert!(linearize(&ch, run.world.object.primitive()).is_ok());
}

#[test]
fn malformed_trace_reports_its_line() {
    let text = "t,event_kind,process,operation,cell,queue_pos,value,returned\n0,op_invoke/read,0,0,,,,\n1,bogus,0,0,,,,\n";
    let err = History::read_csv(text.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}
