//! Moderate-size Monte Carlo checks of model behaviour. The full-scale
//! versions live in the acceptance target.

use cookiewalk::branching::{Caps, DualProcess};
use cookiewalk::regen::{correspondence_samples, find_regenerations};
use cookiewalk::rng::rng_from;
use cookiewalk::stats;
use cookiewalk::walk::{self, StopRule, WalkConfig};
use cookiewalk::StackModel;

#[test]
fn drift_martingale_has_zero_mean() {
    let cfg = WalkConfig::steps(1, 10_000);
    let m: Vec<f64> = walk::batch_map(&StackModel::omega(0.8, 5), &cfg, 31, 10_000, 1, |_, t, _| {
        let t = t.unwrap();
        t.position.coord(1) as f64 - t.drift.unwrap()
    });
    let (mean, se) = (stats::mean(&m), stats::std_error(&m));
    assert!(mean.abs() < 3.0 * se, "{mean} ± {se}");
}

#[test]
fn transient_walk_reaches_level_1000() {
    let cfg = WalkConfig::new(1, StopRule::HitLevel { level: 1000, axis: 1 }).with_step_cap(10_000_000);
    let hits = walk::batch_map(&StackModel::omega(0.8, 5), &cfg, 32, 1000, 1, |_, t, _| t.is_ok());
    assert!(hits.iter().all(|&h| h));
}

#[test]
fn trapped_range_stops_growing() {
    let model = StackModel::Trapping { eps: 0.25, mix: 0.5 };
    let cfg = WalkConfig::steps(1, 1_000_000).with_snapshots(&[100_000]);
    let ends = walk::batch(&model, &cfg, 33, 200, 1).unwrap();
    let same = ends.iter().filter(|e| e.snapshot(100_000).unwrap().range == e.range).count();
    assert!(same as f64 >= 0.95 * 200.0, "{same}/200");
}

#[test]
fn max_local_time_grows_like_cube_root() {
    let model = StackModel::omega(0.8, 5);
    let med = |n: u64| {
        let ends = walk::batch(&model, &WalkConfig::steps(1, n), 34, 300, 1).unwrap();
        stats::median(&ends.iter().map(|e| e.max_local_time as f64 / (n as f64).cbrt()).collect::<Vec<_>>())
    };
    let (a, b) = (med(100_000), med(1_000_000));
    assert!(a / b < 2.0 && b / a < 2.0, "{a} vs {b}");
}

#[test]
fn cycle_displacement_matches_life_cycle_mean() {
    let model = StackModel::omega(0.8, 5);
    let cfg = WalkConfig::steps(1, 20_000).with_path();
    let trajs: Vec<_> = walk::batch_map(&model, &cfg, 35, 3000, 1, |_, t, _| t.unwrap());
    let corr = correspondence_samples(&trajs, None).unwrap();
    assert!(corr.skipped < 30);
    let disp: Vec<f64> = corr.displacement.iter().map(|&d| d as f64).collect();

    let dual = DualProcess::new(&model).unwrap();
    let mut rng = rng_from(36, &[]);
    let sigma: Vec<f64> = (0..20_000).map(|_| dual.cycle(&mut rng, Caps::default(), false).0.sigma as f64).collect();
    let se = (stats::std_error(&disp).powi(2) + stats::std_error(&sigma).powi(2)).sqrt();
    let gap = (stats::mean(&disp) - stats::mean(&sigma)).abs();
    assert!(gap < 2.5 * se, "gap {gap}, se {se}");
}

#[test]
fn regeneration_times_are_strict_records() {
    let cfg = WalkConfig::steps(1, 50_000).with_path();
    let trajs: Vec<_> = walk::batch_map(&StackModel::omega(0.8, 5), &cfg, 37, 20, 1, |_, t, _| t.unwrap());
    for t in &trajs {
        let path = t.line_path().unwrap();
        for tau in find_regenerations(t, &[1.0], Some(5_000)).unwrap() {
            let x = path[tau as usize];
            assert!(path[..tau as usize].iter().all(|&y| y < x));
            assert!(path[tau as usize..].iter().all(|&y| y >= x));
        }
    }
}
