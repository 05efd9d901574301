//! The dual branching process: life cycles, the mean-offspring identity and
//! the backward jump-count vector read off a walk.
//!
//! cargo run --release --example branching_duality

use cookiewalk::branching::{backward_process, Caps, DualProcess};
use cookiewalk::rng::{replica_env_seed, replica_rng, rng_from};
use cookiewalk::walk::{self, StopRule, WalkConfig};
use cookiewalk::{delta, Environment, StackModel};

fn main() {
    let model = StackModel::omega(0.8, 2);
    let d = delta(&model).unwrap()[0];
    let dual = DualProcess::new(&model).unwrap();
    let mut rng = rng_from(11, &[]);

    let cycles: Vec<_> = (0..50_000).map(|_| dual.cycle(&mut rng, Caps::default(), false).0).collect();
    let mean_sigma = cycles.iter().map(|c| c.sigma as f64).sum::<f64>() / cycles.len() as f64;
    let longest = cycles.iter().map(|c| c.sigma).max().unwrap();
    println!("{} life cycles: mean length {mean_sigma:.2}, longest {longest}", cycles.len());

    // E[F_M] - M + 1 = 1 - δ
    let n = 200_000;
    let excess: f64 = (0..n).map(|_| dual.offspring_excess(2, &mut rng) as f64).sum::<f64>() / n as f64;
    println!("mean offspring excess {excess:.4}, 1 - delta = {:.4}", 1.0 - d);

    // (V_0, ..., V_3) against the down-crossing counts of a walk stopped at T_3.
    println!("dual path: {:?}", dual.path(3, &mut rng));
    let cfg = WalkConfig::new(1, StopRule::HitLevel { level: 3, axis: 1 }).with_jump_counts();
    let mut env = Environment::new(model, replica_env_seed(12, 0)).unwrap();
    let t = walk::run(&mut env, &cfg, &mut replica_rng(12, 0)).unwrap();
    println!("walk backward vector (T_3 = {}): {:?}", t.time, backward_process(&t, 3).unwrap());
    println!("T_10 sampled through the dual chain: {}", dual.hitting_time(10, &mut rng));
}
