use std::fs;
use std::path::Path;

use cookiewalk::cli::{main_with_args, run_experiment, CliError, ExperimentConfig, RECORDS_MAGIC};

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn cfg_with_out(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text).unwrap();
    cfg.out = Some(out.to_path_buf());
    cfg
}

const CLASSIFY: &str = r#"
suite = "classify"
seed = 1
[model]
kind = "omega"
p = 0.8
m = 5
[thresholds]
expected_phase = "transient_right/positive"
expected_delta = 3.0
"#;

const SIMULATE: &str = r#"
suite = "simulate"
seed = 11
replicas = 40
horizon = 3000
levels = [5, -5]
[model]
kind = "omega"
p = 0.75
m = 2
"#;

#[test]
fn classify_reports_delta_and_phase() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg_with_out(CLASSIFY, dir.path())).unwrap();
    assert!(out.summary.passed);
    let delta = out.summary.statistics["delta"].as_f64().unwrap();
    // 5 cookies with drift 2·0.8 − 1 = 0.6 each
    assert!((delta - 3.0).abs() < 1e-12);
    assert_eq!(out.summary.statistics["phase"], "transient_right/positive");
    for f in ["records.csv", "summary.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let records = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let first = records.lines().next().unwrap();
    assert_eq!(first, format!("{RECORDS_MAGIC} suite=classify"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["crate_name"], "cookiewalk");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn failing_threshold_gives_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = CLASSIFY.replace("expected_delta = 3.0", "expected_delta = 2.0");
    let out = run_experiment(&cfg_with_out(&text, dir.path())).unwrap();
    assert!(!out.summary.passed);
    assert_eq!(out.exit_code(), 1);
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = "suite = \"duality\"\nseed = 3\nreplicas = 0\n[model]\nkind = \"omega\"\np = 0.8\nm = 2\n";
    let err = run_experiment(&cfg_with_out(text, dir.path())).unwrap_err();
    assert!(matches!(err, CliError::ConfigInvalid(_)));
    assert!(err.to_string().contains("replicas"), "{err}");

    let path = write_config(dir.path(), "bad.toml", text);
    let out = dir.path().join("out").to_string_lossy().into_owned();
    assert_eq!(main_with_args(["cookiewalk", "duality", "--config", &path, "--out", &out]), 2);
}

#[test]
fn suite_mismatch_and_regime_mismatch_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.toml", CLASSIFY);
    let out = dir.path().join("o").to_string_lossy().into_owned();
    assert_eq!(main_with_args(["cookiewalk", "simulate", "--config", &path, "--out", &out]), 2);

    let limits = "suite = \"limits\"\nseed = 2\nreplicas = 20\nhorizon = 1000\nregime = \"v\"\n\
                  [model]\nkind = \"omega\"\np = 0.75\nm = 1\n";
    let path = write_config(dir.path(), "l.toml", limits);
    assert_eq!(main_with_args(["cookiewalk", "limits", "--config", &path, "--out", &out]), 2);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (k, workers) in [1usize, 1, 3].into_iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let mut cfg = cfg_with_out(SIMULATE, &out);
        cfg.workers = Some(workers);
        run_experiment(&cfg).unwrap();
        bytes.push((
            fs::read(out.join("records.csv")).unwrap(),
            fs::read(out.join("summary.json")).unwrap(),
            fs::read(out.join("manifest.json")).unwrap(),
        ));
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[0], bytes[2]);
}

#[test]
fn seed_override_changes_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "s.toml", SIMULATE);
    let a = dir.path().join("a").to_string_lossy().into_owned();
    let b = dir.path().join("b").to_string_lossy().into_owned();
    assert_eq!(main_with_args(["cookiewalk", "simulate", "--config", &path, "--out", &a]), 0);
    assert_eq!(main_with_args(["cookiewalk", "simulate", "--config", &path, "--out", &b, "--seed", "12"]), 0);
    let ra = fs::read_to_string(Path::new(&a).join("records.csv")).unwrap();
    let rb = fs::read_to_string(Path::new(&b).join("records.csv")).unwrap();
    assert_ne!(ra, rb);
    // same header, same number of rows
    assert_eq!(ra.lines().nth(1), rb.lines().nth(1));
    assert_eq!(ra.lines().count(), 2 + 40);
}

#[test]
fn report_reads_simulate_records() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    run_experiment(&cfg_with_out(SIMULATE, &sim)).unwrap();
    let text = format!(
        "suite = \"report\"\nseed = 0\ninput = {:?}\n",
        sim.join("records.csv").to_string_lossy()
    );
    let out = run_experiment(&cfg_with_out(&text, &dir.path().join("rep"))).unwrap();
    assert!(out.summary.passed);
    assert!(out.summary.statistics.to_string().contains("range"));
}
