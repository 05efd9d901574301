//! Checks against values computed outside this crate (see `fixtures/`) and
//! against closed forms for simple walks.

use cookiewalk::rng::{replica_env_seed, replica_rng, rng_from};
use cookiewalk::stats::{self, StableParams};
use cookiewalk::walk::{self, StopRule, WalkConfig};
use cookiewalk::{delta, Cookie, Environment, StackModel};
use rand::Rng;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty())
}

fn floats(line: &str) -> Vec<f64> {
    line.split(',').map(|s| s.trim().parse().unwrap()).collect()
}

#[test]
fn stable_cf_matches_quadrature_of_reference_density() {
    let text = fixture("stable_cf.csv");
    let mut rows = 0;
    for line in data_lines(&text) {
        let v = floats(line);
        let (re, im) = StableParams::new(v[0], v[1]).unwrap().cf(v[2]);
        assert!((re - v[3]).abs() < 1e-5 && (im - v[4]).abs() < 1e-5, "alpha {} b {} u {}: ({re}, {im}) vs ({}, {})", v[0], v[1], v[2], v[3], v[4]);
        rows += 1;
    }
    assert_eq!(rows, 36);
}

#[test]
fn kolmogorov_survival_matches_reference() {
    for line in data_lines(&fixture("kolmogorov.csv")) {
        let v = floats(line);
        assert!((stats::kolmogorov_q(v[0]) - v[1]).abs() < 1e-10, "lambda {}", v[0]);
    }
}

#[test]
fn ks_statistics_match_reference() {
    let text = fixture("ks_samples.txt");
    let get = |key: &str| {
        let line = data_lines(&text).find(|l| l.starts_with(&format!("{key}="))).unwrap();
        floats(&line[key.len() + 1..])
    };
    let (a, b) = (get("a"), get("b"));
    let d = stats::ks_two_sample(&a, &b).unwrap().statistic;
    assert!((d - get("d")[0]).abs() < 1e-12, "{d}");
    let d1 = stats::ks_one_sample(&a, stats::normal_cdf).unwrap().statistic;
    assert!((d1 - get("d1")[0]).abs() < 1e-9, "{d1}");
}

#[test]
fn hill_recovers_pareto_three() {
    let mut rng = rng_from(7, &[]);
    let xs: Vec<f64> = (0..100_000).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 3.0)).collect();
    let est = stats::tail_index(&xs, 0.05).unwrap();
    assert!((est.index - 3.0).abs() < 0.1, "{}", est.index);
}

#[test]
fn omega_delta_closed_form() {
    for (p, m) in [(0.75, 1), (0.875, 2), (0.8, 5), (0.6, 7)] {
        let d = delta(&StackModel::omega(p, m)).unwrap()[0];
        assert!((d - m as f64 * (2.0 * p - 1.0)).abs() < 1e-12);
    }
}

/// P(no return to 0 within 2k steps) = C(2k, k) / 4^k for the simple walk.
#[test]
fn simple_walk_return_probability() {
    let k = 10u64;
    let exact = (1..=k).fold(1.0, |acc, j| acc * (2 * j - 1) as f64 / (2 * j) as f64);
    let model = StackModel::placebo(1);
    let cfg = WalkConfig::new(1, StopRule::FirstReturn { max_steps: 2 * k });
    let n = 40_000u64;
    let escaped = walk::batch(&model, &cfg, 5, n, 1).unwrap().iter().filter(|r| r.first_return.is_none()).count();
    let phat = escaped as f64 / n as f64;
    let se = (exact * (1.0 - exact) / n as f64).sqrt();
    assert!((phat - exact).abs() < 4.0 * se, "{phat} vs {exact}");
}

/// A walk whose every visit uses a right-cookie of strength p is a biased
/// walk, so E T_n = n / (2p − 1).
#[test]
fn biased_walk_mean_hitting_time() {
    let p = 0.7;
    let n = 50i64;
    let model = StackModel::HomogeneousDeterministic { dim: 1, prefix: vec![Cookie::right(p); 4000] };
    let cfg = WalkConfig::new(1, StopRule::HitLevel { level: n, axis: 1 });
    let mut env = Environment::new(model, 0).unwrap();
    let times: Vec<f64> = (0..4000)
        .map(|i| {
            env.reset(replica_env_seed(9, i));
            walk::run(&mut env, &cfg, &mut replica_rng(9, i)).unwrap().time as f64
        })
        .collect();
    let exact = n as f64 / (2.0 * p - 1.0);
    let m = stats::mean(&times);
    assert!((m - exact).abs() < 4.0 * stats::std_error(&times), "{m} vs {exact}");
}
