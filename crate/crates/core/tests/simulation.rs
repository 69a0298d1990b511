mod support;

use std::time::{Duration, Instant};

use hazardpipe_core::sim::{run_scenario, ScenarioConfig, SimReport};
use hazardpipe_core::Config;
use support::oracle::three_vote_agreement;

fn smoke(seed: u64) -> Config {
    let mut cfg = Config::default();
    cfg.simulation = ScenarioConfig { seed, ..ScenarioConfig::smoke() };
    cfg
}

fn check_map_bounds(r: &SimReport) {
    let m = &r.metrics;
    assert!(m.map_50_95 <= m.map_50 + 1e-12, "seed {}: {} > {}", r.seed, m.map_50_95, m.map_50);
    for c in &m.per_class {
        assert!(c.ap_50 <= c.recall + 1e-12, "seed {} {:?}: AP {} > recall {}", r.seed, c.class, c.ap_50, c.recall);
        assert!(c.ap_50_95 <= c.ap_50 + 1e-12);
    }
    for f in r.folds.iter().chain([&r.aggregate]) {
        assert!(f.map_50_95 <= f.map_50 + 1e-12, "fold {}", f.fold);
    }
}

#[test]
fn smoke_run_is_fast_and_complete() {
    let started = Instant::now();
    let r = run_scenario(&smoke(7)).unwrap();
    assert!(started.elapsed() < Duration::from_secs(10), "{:?}", started.elapsed());
    assert_eq!(r.aggregate.n_images, 50);
    assert_eq!(r.folds.len(), 5);
    assert!(r.agreement.is_some());
    assert!(r.latency.is_some());
    assert!(r.overhead_ms_per_image > 0.0);
    assert!(r.csv().starts_with(hazardpipe_core::sim::CSV_HEADER));
    check_map_bounds(&r);
}

#[test]
fn fixed_seed_gives_identical_csv() {
    let a = run_scenario(&smoke(11)).unwrap().csv();
    let b = run_scenario(&smoke(11)).unwrap().csv();
    assert_eq!(a.as_bytes(), b.as_bytes());
    let c = run_scenario(&smoke(12)).unwrap().csv();
    assert_ne!(a, c);
}

#[test]
fn map_bounds_hold_on_every_run() {
    for seed in 0..6 {
        check_map_bounds(&run_scenario(&smoke(seed)).unwrap());
    }
}

fn with_accuracy(seed: u64, n_images: usize, mean: f64, sd: f64) -> Config {
    let mut cfg = smoke(seed);
    cfg.simulation.n_images = n_images;
    cfg.simulation.validator_population.accuracy_mean = mean;
    cfg.simulation.validator_population.accuracy_sd = sd;
    cfg
}

#[test]
fn agreement_rises_with_validator_accuracy() {
    for seed in [3, 4] {
        let rates: Vec<f64> = [0.7, 0.85, 0.965]
            .into_iter()
            .map(|m| run_scenario(&with_accuracy(seed, 200, m, 0.02)).unwrap().agreement.unwrap())
            .collect();
        assert!(rates.windows(2).all(|w| w[0] < w[1]), "seed {seed}: {rates:?}");
    }
}

#[test]
fn coin_flip_crowd_matches_three_vote_baseline() {
    let mut cfg = with_accuracy(21, 400, 0.5, 0.0);
    cfg.validation.eta = 0.0;
    let r = run_scenario(&cfg).unwrap();
    let want = three_vote_agreement(0.5, cfg.validation.tau_hi, cfg.validation.tau_lo);
    assert_eq!(want, 0.125);
    let n = r.agreement_samples as f64;
    let sd = (want * (1.0 - want) / n).sqrt();
    let got = r.agreement.unwrap();
    assert!((got - want).abs() < 4.0 * sd, "{got} vs {want} over {n} decisions");
}
