//! Balanced-excited walk in the plane: directional transience, speed and
//! Gaussian fluctuations.
//!
//! cargo run --release --example multidim

use cookiewalk::limits::{self, LimitsConfig};
use cookiewalk::walk::{self, WalkConfig};
use cookiewalk::StackModel;

fn main() {
    let model = StackModel::Bw { dim: 2, p: 0.75 };
    let ends = walk::batch(&model, &WalkConfig::steps(2, 10_000), 1, 5, 1).unwrap();
    for e in &ends {
        println!("X_n = {:?}, range {}", e.position.coords(), e.range);
    }

    let r = limits::multidim_checks(&model, &LimitsConfig::new(100_000, 300, 2), 1000).unwrap();
    println!("v.e1 = {:.5} ({:.5}, {:.5})", r.speed.estimate, r.speed.lo, r.speed.hi);
    println!("transverse mean/se: {:?}", r.transverse);
    for c in &r.normality {
        println!("{}: D = {:.4}, p = {:.3}", c.label, c.statistic, c.p_value);
    }
    println!("directional fraction {:.3}", r.directional_fraction);
}
