//! Scaling-limit checks at small scale: recurrent (perturbed Brownian
//! motion), critical (running maximum) and ballistic Gaussian fluctuations.
//!
//! cargo run --release --example limit_laws

use cookiewalk::limits::{self, Centering, LimitsConfig, PerturbedBmParams, ScalingRegime, TransientConfig};
use cookiewalk::rng::rng_from;
use cookiewalk::StackModel;

fn main() {
    // One perturbed Brownian path X = B + 0.5 sup X - 0.5 inf X.
    let params = PerturbedBmParams::new(0.5, -0.5, 1.0, 1e-4).unwrap();
    let path = limits::simulate_perturbed_bm(&params, &[0.25, 0.5, 1.0], &mut rng_from(1, &[])).unwrap();
    println!("X at 0.25, 0.5, 1: {:?}; residual {:.1e}", path.x, path.max_residual);

    let mut cfg = LimitsConfig::new(20_000, 2000, 2);
    cfg.dt = 1e-3;
    let r = limits::recurrent_limit_check(&StackModel::omega(0.75, 1), &cfg).unwrap();
    println!("recurrent delta=0.5: {} D = {:.4}, p = {:.3}", r.comparison.label, r.comparison.statistic, r.comparison.p_value);

    let r = limits::critical_limit_check(&StackModel::omega(0.75, 2), &[1_000, 20_000], &cfg).unwrap();
    for c in &r.comparisons {
        println!("critical: {} D = {:.4} (scale {:.3})", c.label, c.statistic, c.fitted_scale.unwrap());
    }

    let mut tc = TransientConfig::new(100_000, 2000, 3);
    tc.centering = Centering::FitHalf;
    let r = limits::transient_marginal_check(&StackModel::omega(0.8, 10), ScalingRegime::V, &tc, None).unwrap();
    let c = &r.comparisons[0];
    println!("delta=6 regime {}: v = {:.5}, {} D = {:.4}, p = {:.3}", r.family.regime, r.centering_speed.unwrap(), c.label, c.statistic, c.p_value);

    // Asking for the wrong regime is an error, not a silent mismatch.
    let e = limits::transient_marginal_check(&StackModel::omega(0.75, 1), ScalingRegime::V, &tc, None).unwrap_err();
    println!("regime (v) for delta=0.5: {e}");
}
