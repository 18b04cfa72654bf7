mod common;

use common::{all_at_zero, replay};
use crqw::engine::{EngineOptions, World};
use crqw::experiment::{run_one, AssertLevel};
use crqw::history::{EventKind, History};
use crqw::memory::{InstrKind, Label};
use crqw::metrics::{detect_busy_intervals, Metrics};
use crqw::object::ObjectKind;
use crqw::ops::{OpResult, OpSpec};
use crqw::primitives::{Fault, PrimitiveKind};
use crqw::sched::Scheduler;
use crqw::sim::Sim;
use crqw::workload::{Observation, Workload};
use crqw::{OpId, SimConfig};

fn applies_of(h: &History, op: OpId) -> Vec<(u64, InstrKind, Label)> {
    h.iter()
        .filter(|e| e.op == op)
        .filter_map(|e| match e.kind {
            EventKind::Apply { instr, label, .. } => Some((e.t, instr, label)),
            _ => None,
        })
        .collect()
}

#[test]
fn solo_register_write_takes_three_steps() {
    let cfg = SimConfig::default().with_processes(1);
    let run = replay(&cfg, PrimitiveKind::BackOnRegister, "greedy", vec![(0, 0, OpSpec::Write(42)), (10, 0, OpSpec::Read)], 100);
    let w = run.completions[0];
    assert_eq!((w.invoked_at, w.returned_at, w.result), (0, 3, OpResult::Unit));
    assert_eq!(
        applies_of(&run.history, w.op),
        vec![(0, InstrKind::Load, Label::S), (1, InstrKind::Load, Label::R), (2, InstrKind::StoreRandom, Label::W)]
    );
    assert_eq!(run.completions[1].result, OpResult::Value(42));
}

#[test]
fn fresh_register_reads_zero() {
    let cfg = SimConfig::default().with_processes(3);
    let run = replay(&cfg, PrimitiveKind::BackOnRegister, "greedy", vec![(0, 1, OpSpec::Read)], 100);
    assert_eq!(run.completions[0].result, OpResult::Value(0));
}

#[test]
fn naive_writes_drain_one_per_step() {
    let p = 16;
    let cfg = SimConfig::default().with_processes(p);
    let run = replay(&cfg, PrimitiveKind::NaiveRegister, "greedy", all_at_zero(p, |i| OpSpec::Write(i as u64 + 1)), 1000);
    let mut returns: Vec<u64> = run.completions.iter().map(|c| c.returned_at).collect();
    returns.sort_unstable();
    assert_eq!(returns, (1..=p as u64).collect::<Vec<_>>());
    assert_eq!(detect_busy_intervals(&run.history, 0), vec![(0, p as u64)]);
}

#[test]
fn quiescent_trace_has_no_busy_interval() {
    let cfg = SimConfig::default().with_processes(4);
    let run = replay(&cfg, PrimitiveKind::NaiveRegister, "greedy", all_at_zero(4, |_| OpSpec::Read), 100);
    assert!(detect_busy_intervals(&run.history, 0).is_empty());
}

#[test]
fn load_during_apply_sees_the_old_value() {
    let cfg = SimConfig::default().with_processes(2);
    let inv = vec![(0, 0, OpSpec::Write(9)), (0, 1, OpSpec::Read), (5, 1, OpSpec::Read)];
    let run = replay(&cfg, PrimitiveKind::NaiveRegister, "greedy", inv, 100);
    let reads: Vec<_> = run.completions.iter().filter(|c| c.spec == OpSpec::Read).map(|c| c.result).collect();
    assert_eq!(reads, vec![OpResult::Value(0), OpResult::Value(9)]);
}

#[test]
fn basic_cas_early_returns_skip_the_hardware_cas() {
    let cfg = SimConfig::default().with_processes(1);
    let inv = vec![
        (0, 0, OpSpec::Cas { expected: 0, new: 5 }),
        (50, 0, OpSpec::Cas { expected: 5, new: 5 }),
        (100, 0, OpSpec::Cas { expected: 6, new: 9 }),
        (150, 0, OpSpec::Read),
    ];
    for prim in [PrimitiveKind::BasicCas, PrimitiveKind::ImprovedCas] {
        let run = replay(&cfg, prim, "greedy", inv.clone(), 1000);
        let results: Vec<_> = run.completions.iter().map(|c| c.result).collect();
        assert_eq!(results, vec![OpResult::Bool(true), OpResult::Bool(true), OpResult::Bool(false), OpResult::Value(5)]);
        for c in &run.completions[1..3] {
            let a = applies_of(&run.history, c.op);
            assert!(a.iter().all(|&(_, i, l)| i != InstrKind::Cas && l != Label::WPrime), "{prim:?}: {a:?}");
        }
    }
}

#[test]
fn two_concurrent_cas_have_one_winner() {
    for prim in [PrimitiveKind::NaiveCas, PrimitiveKind::BasicCas, PrimitiveKind::ImprovedCas] {
        for seed in 0..60 {
            for sched in ["greedy", "greedy@reverse", "random-delay:skew", "chaos@random"] {
                let cfg = SimConfig::default().with_processes(2).with_seed(seed);
                let run = replay(&cfg, prim, sched, all_at_zero(2, |_| OpSpec::Cas { expected: 0, new: 1 }), 100_000);
                let wins = run.completions.iter().filter(|c| c.result == OpResult::Bool(true)).count();
                assert_eq!((run.completions.len(), wins), (2, 1), "{prim:?} {sched} seed {seed}");
            }
        }
    }
}

#[test]
fn one_shot_cas_round_has_one_winner() {
    for seed in 0..20 {
        let cfg = SimConfig::default().with_processes(16).with_seed(seed);
        let run = replay(&cfg, PrimitiveKind::ImprovedCas, "random-delay:pile-up", all_at_zero(16, |_| OpSpec::Cas { expected: 0, new: 1 }), 1_000_000);
        assert_eq!(run.completions.iter().filter(|c| c.result == OpResult::Bool(true)).count(), 1);
    }
}

#[test]
fn improved_solo_latency_is_wait_plus_basic_plus_three() {
    // Solo, the embedded short-lived CAS draws the same coins as a bare one,
    // so the two latencies differ by the Nops plus S', R' and W'.
    for seed in 0..40 {
        for p in [1, 4, 64] {
            let cfg = SimConfig::default().with_processes(p).with_seed(seed);
            let op = vec![(0, 0, OpSpec::Cas { expected: 0, new: 1 })];
            let basic = replay(&cfg, PrimitiveKind::BasicCas, "greedy", op.clone(), 100_000).completions[0];
            let improved = replay(&cfg, PrimitiveKind::ImprovedCas, "greedy", op, 100_000).completions[0];
            assert_eq!(improved.latency(), cfg.wait_nops() as u64 + basic.latency() + 3, "P={p} seed {seed}");
        }
    }
}

#[test]
fn improved_cas_waits_before_calling() {
    let cfg = SimConfig::default().with_processes(8).with_seed(3);
    let run = run_flood(&cfg, PrimitiveKind::ImprovedCas, 3000);
    let mut checked = 0;
    for op in run.iter().filter_map(|e| matches!(e.kind, EventKind::OpInvoke { spec: OpSpec::Cas { .. }, .. }).then_some(e.op)) {
        let labels: Vec<Label> = run
            .iter()
            .filter(|e| e.op == op)
            .filter_map(|e| match e.kind {
                EventKind::Invoke { label, .. } => Some(label),
                _ => None,
            })
            .collect();
        if let Some(k) = labels.iter().position(|&l| l == Label::S) {
            assert!(k as u32 >= cfg.wait_nops(), "op {op} called after {k} steps");
            checked += 1;
        }
    }
    assert!(checked > 10);
}

fn run_flood(cfg: &SimConfig, prim: PrimitiveKind, horizon: u64) -> History {
    let world = World::for_primitive(cfg, prim, EngineOptions::full()).unwrap();
    let wl = Workload::from_id("cas-flood", cfg.processes, ObjectKind::CasRegister, cfg.seed, cfg.value_mask()).unwrap();
    let sched = Scheduler::from_id("greedy", cfg.seed, cfg.processes, cfg.tau, false).unwrap();
    let mut sim = Sim::new(world, sched, wl);
    sim.run(horizon).unwrap();
    sim.world.take_history().unwrap()
}

#[test]
fn successful_cas_advances_the_counter_by_one() {
    let cfg = SimConfig { fingerprint_modulus: Some(5), ..SimConfig::default() }.with_processes(8).with_seed(11);
    let fresh = World::for_primitive(&cfg, PrimitiveKind::BasicCas, EngineOptions::default()).unwrap();
    let prim = fresh.object.primitive().clone();
    let mut f = prim.fingerprint_of(fresh.mem.cells[prim.cell as usize].value);
    let h = run_flood(&cfg, PrimitiveKind::BasicCas, 5000);
    let mut successes = 0;
    for e in h.iter() {
        if let EventKind::Apply { instr: InstrKind::Cas, returned: 1, post: Some(w), .. } = e.kind {
            f = (f + 1) % 5;
            assert_eq!(prim.fingerprint_of(w), f, "t={}", e.t);
            successes += 1;
        }
    }
    assert!(successes > 20);
}

#[test]
fn identical_inputs_give_identical_histories() {
    let cfg = SimConfig::default().with_processes(8).with_seed(5);
    let a = run_one(&cfg, PrimitiveKind::ImprovedCas, "random-delay:jitter@random", "poisson:0.3:0.5", 2000, 0, AssertLevel::Off, true).unwrap();
    let b = run_one(&cfg, PrimitiveKind::ImprovedCas, "random-delay:jitter@random", "poisson:0.3:0.5", 2000, 0, AssertLevel::Off, true).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.metrics_rows, b.metrics_rows);
}

#[test]
fn potential_after_everyone_loads_s() {
    // Every write sits just past S with probability P^-a.
    let p = 8;
    let cfg = SimConfig { p0_exponent: 3.0, ..SimConfig::default() }.with_processes(p);
    let world = World::for_primitive(&cfg, PrimitiveKind::BackOnRegister, EngineOptions::default()).unwrap();
    let metrics = Metrics::new(&world, true, false);
    let wl = Workload::from_id("one-shot-write", p, ObjectKind::Register, 0, cfg.value_mask()).unwrap();
    let mut sim = Sim::new(world, Scheduler::greedy(0, p, 1, false), wl).with_metrics(metrics);
    sim.step().unwrap();
    let row = sim.metrics.as_ref().unwrap().rows.as_ref().unwrap()[0];
    let expect = p as f64 * (p as f64).powf(-3.0);
    assert!((row.phi - expect).abs() <= expect * 1e-12, "{} vs {expect}", row.phi);
}

#[test]
fn no_pending_writes_means_zero_potential() {
    let cfg = SimConfig::default().with_processes(4);
    let out = run_one(&cfg, PrimitiveKind::BackOnRegister, "greedy", "one-shot-read", 100, 0, AssertLevel::Fast, false).unwrap();
    assert_eq!(out.max_phi, 0.0);
}

fn growth_ok_with(fault: Option<Fault>) -> bool {
    let cfg = SimConfig::default().with_processes(64).with_seed(2);
    let world = World::for_primitive(&cfg, PrimitiveKind::BackOnRegister, EngineOptions { fault, ..Default::default() }).unwrap();
    let metrics = Metrics::new(&world, false, false);
    let wl = Workload::from_id("one-shot-write", 64, ObjectKind::Register, 2, cfg.value_mask()).unwrap();
    let mut sim = Sim::new(world, Scheduler::greedy(2, 64, 1, false), wl).with_metrics(metrics);
    sim.run(10_000).unwrap();
    sim.metrics.unwrap().growth_ok()
}

#[test]
fn tripled_growth_breaks_the_potential_bound() {
    assert!(growth_ok_with(None));
    assert!(!growth_ok_with(Some(Fault::TripleGrowth)));
}

#[test]
fn solo_latency_report() {
    let cfg = SimConfig::default().with_processes(1);
    let out = run_one(&cfg, PrimitiveKind::BackOnRegister, "greedy", "one-shot-write", 100, 0, AssertLevel::Full, false).unwrap();
    assert_eq!(out.per_time_max, vec![3]);
    assert_eq!(out.latency, vec![(0, 1, 3, 0)]);
    assert!(out.failures.is_empty(), "{:?}", out.failures);
}

#[test]
fn naive_cas_flood_queues_everyone() {
    let cfg = SimConfig::default().with_processes(64);
    let out = run_one(&cfg, PrimitiveKind::NaiveCas, "greedy", "cas-flood", 300, 0, AssertLevel::Off, false).unwrap();
    assert_eq!(out.max_queue_c, 64);
}

#[test]
fn poisson_read_fraction_converges() {
    let p = 64;
    let mut wl = Workload::from_id("poisson:0.5:0.1", p, ObjectKind::Register, 9, 0xff).unwrap();
    let free: Vec<u32> = (0..p).collect();
    let mut out = Vec::new();
    let (mut reads, mut total) = (0u64, 0u64);
    for t in 0..100_000 {
        wl.decide(&Observation { t, completed: &[], free: &free }, &mut out);
        total += out.len() as u64;
        reads += out.iter().filter(|(_, s)| *s == OpSpec::Read).count() as u64;
    }
    let frac = reads as f64 / total as f64;
    assert!((frac - 0.5).abs() <= 0.02, "{frac}");
}

#[test]
fn read_only_mix_never_updates() {
    let cfg = SimConfig::default().with_processes(8);
    let out = run_one(&cfg, PrimitiveKind::BackOnRegister, "greedy", "poisson:1:0.5", 2000, 0, AssertLevel::Off, true).unwrap();
    let h = History::read_csv(out.trace.unwrap().as_slice()).unwrap();
    assert!(h.iter().any(|e| matches!(e.kind, EventKind::OpInvoke { .. })));
    assert!(h.iter().all(|e| !matches!(e.kind, EventKind::Enqueue { .. })));
}
