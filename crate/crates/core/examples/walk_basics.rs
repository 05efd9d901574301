//! Run a few excited random walks and inspect what a trajectory records.
//!
//! cargo run --release --example walk_basics

use cookiewalk::rng::{replica_env_seed, replica_rng};
use cookiewalk::walk::{self, jump_identities, StopRule, WalkConfig};
use cookiewalk::{Environment, StackModel};

fn main() {
    // five cookies per site, each pushing right with probability 0.8
    let model = StackModel::omega(0.8, 5);
    let mut env = Environment::new(model.clone(), 0).unwrap();

    let cfg = WalkConfig::steps(1, 100_000).with_local_times().with_snapshots(&[1_000, 10_000]);
    for i in 0..3 {
        env.reset(replica_env_seed(7, i));
        let t = walk::run(&mut env, &cfg, &mut replica_rng(7, i)).unwrap();
        println!(
            "replica {i}: X_n = {}, sup = {}, inf = {}, range = {}, max local time = {}, T_100 = {:?}",
            t.position.coord(1),
            t.sup,
            t.inf,
            t.range,
            t.max_local_time,
            t.hitting_time(100)
        );
        for s in &t.snapshots {
            println!("    at t = {:>6}: X = {:>6}, range = {}", s.time, s.position.coord(1), s.range);
        }
    }

    // Stop at level 50 and check the jump-count identities exactly.
    let cfg = WalkConfig::new(1, StopRule::HitLevel { level: 50, axis: 1 }).with_jump_counts();
    env.reset(replica_env_seed(7, 99));
    let t = walk::run(&mut env, &cfg, &mut replica_rng(7, 99)).unwrap();
    let r = jump_identities(&t, 50).unwrap();
    println!("T_50 = {} = 50 + 2 * {} (levels checked: {})", r.hitting_time, r.down_total, r.levels_checked);

    // Batches give the same records whatever the worker count.
    let ends = walk::batch(&model, &WalkConfig::steps(1, 10_000), 7, 200, 2).unwrap();
    let mean = ends.iter().map(|e| e.x() as f64).sum::<f64>() / ends.len() as f64 / 10_000.0;
    println!("mean X_n/n over 200 replicas: {mean:.4}");
}
