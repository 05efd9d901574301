//! δ and the phase of several cookie-stack models.
//!
//! cargo run --release --example classify

use cookiewalk::env::{delta_monte_carlo, RightLaw, StackAtom};
use cookiewalk::rng::rng_from;
use cookiewalk::{classify_phase, delta, StackModel};

fn main() {
    let models = vec![
        StackModel::omega(0.75, 1),
        StackModel::omega(0.75, 2),
        StackModel::omega(0.875, 2),
        StackModel::omega(0.75, 4),
        StackModel::omega(0.8, 5),
        StackModel::omega(0.2, 5),
        StackModel::BoundedIid {
            max_cookies: 2,
            atoms: vec![
                StackAtom { weight: 0.5, right: vec![1.0, 1.0] },
                StackAtom { weight: 0.5, right: vec![0.5] },
            ],
        },
        StackModel::HaveYourCookie { law: RightLaw::Uniform { lo: 0.5, hi: 0.9 } },
        StackModel::Bw { dim: 2, p: 0.75 },
    ];
    for m in &models {
        match delta(m) {
            Ok(d) => println!("{:<40} delta = {:>8.4}  phase {}", m.id(), d[0], classify_phase(d[0])),
            Err(e) => println!("{:<40} {e}", m.id()),
        }
    }

    // The closed form against a Monte Carlo average over sampled stacks.
    let m = &models[6];
    let mut rng = rng_from(3, &[]);
    let (mean, se) = delta_monte_carlo(m, 100_000, &mut rng).unwrap();
    println!("{}: Monte Carlo delta = {:.4} ± {:.4}", m.id(), mean[0], se[0]);
}
