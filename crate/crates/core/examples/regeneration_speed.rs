//! Regeneration times and the speed of a ballistic walk.
//!
//! cargo run --release --example regeneration_speed

use cookiewalk::regen::{self, cycles, find_regenerations};
use cookiewalk::rng::{replica_env_seed, replica_rng, rng_from};
use cookiewalk::walk::{self, WalkConfig};
use cookiewalk::{Environment, StackModel};

fn main() {
    let model = StackModel::omega(0.8, 5);

    let mut env = Environment::new(model.clone(), replica_env_seed(1, 0)).unwrap();
    let t = walk::run(&mut env, &WalkConfig::steps(1, 100_000).with_path(), &mut replica_rng(1, 0)).unwrap();
    let taus = find_regenerations(&t, &[1.0], None).unwrap();
    let (_, cyc) = cycles(&t, &[1.0], &taus).unwrap();
    println!("one walk: {} regeneration times, first few {:?}", taus.len(), &taus[..5.min(taus.len())]);
    println!("first cycles (duration, displacement): {:?}", cyc.iter().take(5).map(|c| (c.duration, c.displacement)).collect::<Vec<_>>());

    // Pooled cycle speed with a bootstrap interval.
    let pooled = regen::collect_cycles(&model, 2, 100_000, 20, 1).unwrap();
    let est = regen::speed_estimate(&pooled, 1000, 0.95, &mut rng_from(3, &[])).unwrap();
    println!("pooled cycles: v_hat = {:.5}, CI ({:.5}, {:.5}), {} cycles", est.v_hat, est.ci.0, est.ci.1, est.cycles);

    // Replica-level totals scale to long walks without keeping every cycle.
    let both = regen::cycle_totals_batch(&model, 4, 200_000, 50, 1, 20, &[]).unwrap();
    let totals: Vec<_> = both.iter().map(|b| b.0.clone()).collect();
    let est = regen::speed_from_totals(&totals, 1000, 0.95, &mut rng_from(5, &[])).unwrap();
    let direct = both.iter().map(|b| b.1.x() as f64 / 200_000.0).sum::<f64>() / both.len() as f64;
    println!("replica totals: v_hat = {:.5} ± {:.5}; direct mean X_n/n = {direct:.5}", est.v_hat, est.se);

    let rate = regen::contamination_rate(&model, 6, 20_000, 20, 1).unwrap();
    println!("regeneration times refuted by doubling the horizon: {:.2e}", rate);
}
