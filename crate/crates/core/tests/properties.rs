use proptest::prelude::*;

use crqw::engine::{EngineOptions, World};
use crqw::experiment::{fit_log2, parse_seed_range, run_one, AssertLevel};
use crqw::history::History;
use crqw::memory::{apply_cas, apply_store_random, Cell, Word};
use crqw::metrics::nearest_rank;
use crqw::primitives::PrimitiveKind;
use crqw::rng::Tape;
use crqw::sched::{induced_coin, window_sum_with, Scheduler};
use crqw::sim::Sim;
use crqw::workload::Workload;
use crqw::SimConfig;

const PRIMS: [PrimitiveKind; 5] = [
    PrimitiveKind::NaiveRegister,
    PrimitiveKind::BackOnRegister,
    PrimitiveKind::NaiveCas,
    PrimitiveKind::BasicCas,
    PrimitiveKind::ImprovedCas,
];

const SCHEDS: [&str; 6] = ["greedy", "random-delay:laziest", "random-delay:skew", "random-delay:pile-up", "random-delay:jitter", "chaos"];

fn workload_for(prim: PrimitiveKind, pick: usize) -> &'static str {
    let reg = ["one-shot-write", "poisson:0.5:0.5", "poisson:0.1:0.9", "one-shot-read"];
    let cas = ["cas-flood", "cas-flood:continuous", "poisson:0.3:0.6", "one-shot-cas"];
    if prim.is_cas() {
        cas[pick % 4]
    } else {
        reg[pick % 4]
    }
}

fn bit(mask: u64, j: u64) -> bool {
    mask >> (j % 64) & 1 == 1
}

proptest! {
    #[test]
    fn cas_matches_its_sequential_model(v in 0u64..8, e in 0u64..8, n in 0u64..8) {
        let mut cell = Cell::new(0, Word(v));
        let ok = apply_cas(&mut cell, Word(e), Word(n));
        prop_assert_eq!(ok, v == e);
        prop_assert_eq!(cell.value, Word(if v == e { n } else { v }));
        prop_assert_eq!(cell.version, u64::from(v == e && v != n));
    }

    #[test]
    fn store_random_stays_in_its_interval(lo in 0u64..200, span in 0u64..55, seed in any::<u64>()) {
        let mut cell = Cell::new(0, Word(0));
        let mut tape = Tape::new(seed, "prop", 0);
        let x = apply_store_random(&mut cell, Word(lo), Word(lo + span), 8, &mut tape).unwrap();
        prop_assert!(x.0 >= lo && x.0 <= lo + span);
        prop_assert_eq!(cell.value, x);
        prop_assert_eq!(cell.version, u64::from(x.0 != 0));
    }

    #[test]
    fn window_sum_matches_its_definition(tau in 1u32..6, t1 in 0u64..100, len in 0u64..60, mask in any::<u64>()) {
        let t2 = t1 + len;
        let tau64 = tau as u64;
        let expected = (0..=t2).filter(|&j| j * tau64 >= t1 && j * tau64 + tau64 <= t2 && bit(mask, j)).count() as u64;
        prop_assert_eq!(window_sum_with(tau, t1, t2, |j| bit(mask, j)), expected);
    }

    #[test]
    fn window_sums_split_at_window_boundaries(tau in 1u32..6, a in 0u64..50, b in 0u64..20, c in 0u64..20, mask in any::<u64>()) {
        let tau64 = tau as u64;
        let t1 = a;
        let m = (a.div_ceil(tau64) + b) * tau64;
        let t2 = m + c;
        let whole = window_sum_with(tau, t1, t2, |j| bit(mask, j));
        let parts = window_sum_with(tau, t1, m, |j| bit(mask, j)) + window_sum_with(tau, m, t2, |j| bit(mask, j));
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn induced_coin_is_a_majority(k in 0u32..4, j in 0u64..8, mask in any::<u64>()) {
        let n = 2 * k as u64 + 1;
        let ones = (0..n).filter(|&i| bit(mask, n * j + i)).count() as u64;
        prop_assert_eq!(induced_coin(k, j, |x| bit(mask, x)), 2 * ones > n);
    }

    #[test]
    fn nearest_rank_is_the_smallest_covering_value(mut v in prop::collection::vec(0u64..50, 1..40), q in 0.01f64..1.0) {
        let orig = v.clone();
        let r = nearest_rank(&mut v, q).unwrap();
        let need = ((q * orig.len() as f64).ceil() as usize).max(1);
        prop_assert!(orig.contains(&r));
        prop_assert!(orig.iter().filter(|&&x| x <= r).count() >= need);
        prop_assert!(orig.iter().filter(|&&x| x < r).count() < need);
    }

    #[test]
    fn log_fit_is_exact_on_lines(alpha in 0.0f64..20.0, beta in 1.0f64..50.0) {
        let pts: Vec<(u32, f64)> = [4u32, 16, 64, 256].iter().map(|&p| (p, alpha * (p as f64).log2() + beta)).collect();
        let fit = fit_log2(&pts).unwrap();
        prop_assert!((fit.alpha - alpha).abs() < 1e-6);
        prop_assert!((fit.beta - beta).abs() < 1e-6);
    }

    #[test]
    fn seed_ranges_expand(a in 0u64..1000, n in 0u64..50) {
        prop_assert_eq!(parse_seed_range(&format!("{a}..{}", a + n)).unwrap(), (a..a + n).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn random_small_runs_pass_every_check(prim in 0usize..5, p in 1u32..7, sched in 0usize..6, wl in 0usize..4, seed in any::<u64>()) {
        let prim = PRIMS[prim];
        let cfg = SimConfig::default().with_processes(p).with_seed(seed);
        let r = run_one(&cfg, prim, SCHEDS[sched], workload_for(prim, wl), 400, 20_000, AssertLevel::Full, false).unwrap();
        prop_assert!(r.failures.is_empty(), "{:?}", r.failures);
        prop_assert_eq!(r.lincheck, Some(true));
        prop_assert_ne!(r.audit, Some(false));
    }

    #[test]
    fn histories_round_trip_through_csv(prim in 0usize..5, p in 1u32..6, sched in 0usize..6, seed in any::<u64>()) {
        let prim = PRIMS[prim];
        let cfg = SimConfig::default().with_processes(p).with_seed(seed);
        let world = World::for_primitive(&cfg, prim, EngineOptions::full()).unwrap();
        let s = Scheduler::from_id(SCHEDS[sched], seed, p, cfg.tau, false).unwrap();
        let w = Workload::from_id(workload_for(prim, 2), p, world.object.kind, seed, cfg.value_mask()).unwrap();
        let mut sim = Sim::new(world, s, w);
        sim.run(300).unwrap();
        let h = sim.world.take_history().unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        prop_assert_eq!(History::read_csv(buf.as_slice()).unwrap(), h);
    }
}
