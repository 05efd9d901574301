//! Drive a batch suite from a TOML string, as the `cookiewalk` binary does
//! from a file, and read back its outputs.
//!
//! cargo run --release --example cli_suite

use cookiewalk::cli::{run_experiment, ExperimentConfig};

const CONFIG: &str = r#"
suite = "simulate"
seed = 42
replicas = 200
horizon = 50000
levels = [10, 100]

[model]
kind = "omega"
p = 0.8
m = 5

[thresholds]
speed_ci_excludes_zero = true
"#;

fn main() {
    let dir = std::env::temp_dir().join("cookiewalk-example");
    let mut cfg = ExperimentConfig::from_toml(CONFIG).unwrap();
    cfg.out = Some(dir.clone());
    let out = run_experiment(&cfg).unwrap();
    for c in &out.summary.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value);
    }
    let records = std::fs::read_to_string(dir.join("records.csv")).unwrap();
    for line in records.lines().take(4) {
        println!("{line}");
    }
    println!("manifest: {}", std::fs::read_to_string(dir.join("manifest.json")).unwrap());
}
