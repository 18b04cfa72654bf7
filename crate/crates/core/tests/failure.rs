use crqw::apps::{failure_demo, DemoMode, Stress};
use crqw::SimConfig;

#[test]
fn stressed_basic_cas_blows_up() {
    let cfg = Stress::default().apply(&SimConfig::default().with_processes(64));
    for seed in 0..4 {
        let r = failure_demo(&cfg.clone().with_seed(seed), DemoMode::Basic, "greedy", 1_000_000, true).unwrap();
        let t = r.first_blowup.unwrap_or_else(|| panic!("seed {seed}: no blow-up, max queue {}", r.max_queue_c));
        assert!(r.max_queue_c >= 32);
        assert_eq!(r.steps, t + 1);
    }
}

#[test]
fn unstressed_basic_cas_with_its_own_start_exponent_stays_short() {
    // p0 = P^-(2 c^3), the exponent the basic algorithm prescribes.
    let c = SimConfig::default().c;
    for seed in 0..10 {
        let cfg = SimConfig { cas_p0_exponent: 2.0 * (c as f64).powi(3), ..SimConfig::default() }.with_processes(64).with_seed(seed);
        let r = failure_demo(&cfg, DemoMode::Basic, "greedy", 10_000, false).unwrap();
        assert_eq!(r.first_blowup, None, "seed {seed}");
        assert!(r.completed > 0);
    }
}

#[test]
fn improved_cas_keeps_completing_under_stress() {
    let cfg = Stress::default().apply(&SimConfig::default().with_processes(64).with_seed(3));
    let r = failure_demo(&cfg, DemoMode::Improved, "greedy", 50_000, false).unwrap();
    assert_eq!(r.steps, 50_000);
    assert!(r.completed as f64 / r.steps as f64 > 0.1, "{r:?}");
}
