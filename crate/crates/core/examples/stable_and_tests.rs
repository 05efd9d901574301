//! The statistics toolkit: totally skewed stable draws, Hill tail estimates,
//! KS tests and bootstrap intervals.
//!
//! cargo run --release --example stable_and_tests

use cookiewalk::rng::rng_from;
use cookiewalk::stats::{self, StableParams};

fn main() {
    let mut rng = rng_from(1, &[]);
    for alpha in [0.75, 1.0, 1.5, 2.0] {
        let p = StableParams::new(alpha, 1.0).unwrap();
        let xs = stats::sample_stable_n(&p, 200_000, &mut rng);
        let (er, ei) = stats::empirical_cf(&xs, 1.0);
        let (tr, ti) = p.cf(1.0);
        println!(
            "alpha {alpha}: CF(1) empirical ({er:.4}, {ei:.4}) vs exact ({tr:.4}, {ti:.4}); quartiles {:?}",
            stats::quartiles(&xs).map(|q| (q * 1000.0).round() / 1000.0)
        );
    }

    // Hill on positive 0.75-stable draws recovers the index.
    let p = StableParams::new(0.75, 1.0).unwrap();
    let xs = stats::sample_stable_n(&p, 100_000, &mut rng);
    let h = stats::tail_index(&xs, 0.02).unwrap();
    println!("Hill index of Z_0.75: {:.3} (CI {:.3}..{:.3})", h.index, h.ci.0, h.ci.1);

    let a = stats::sample_stable_n(&StableParams::new(2.0, 0.5).unwrap(), 5000, &mut rng);
    let b = stats::sample_stable_n(&StableParams::new(2.0, 0.6).unwrap(), 5000, &mut rng);
    let one = stats::ks_one_sample(&a, stats::normal_cdf).unwrap();
    let two = stats::ks_two_sample(&a, &b).unwrap();
    println!("Z_2,1/2 vs N(0,1): D = {:.4}, p = {:.3}", one.statistic, one.p_value);
    println!("Z_2,1/2 vs Z_2,0.6: D = {:.4}, p = {:.3}", two.statistic, two.p_value);

    let ci = stats::bootstrap_ci(&a, stats::mean, 2000, 0.95, &mut rng).unwrap();
    println!("bootstrap mean {:.4}, 95% CI ({:.4}, {:.4})", ci.estimate, ci.lo, ci.hi);
}
