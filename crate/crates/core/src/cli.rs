//! Batch experiments: TOML configs, the verification suites, and their
//! output files.
//!
//! A run writes three files to the output directory:
//!
//! - `records.csv`: a `#cookiewalk-records v1 suite=<suite>` line, a header
//!   row, then one comma-separated line per replica (or per cycle / per
//!   comparison, depending on the suite);
//! - `summary.json`: all statistics of the suite and its pass/fail checks;
//! - `manifest.json`: crate version, seed, and the SHA-256 of the effective config.
//!
//! Pass/fail checks come only from the `[thresholds]` table of the config.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::branching::{Caps, DualProcess};
use crate::env::{self, classify_phase, Cookie, EnvError, RightLaw, StackAtom, StackModel};
use crate::harness;
use crate::limits::{self, Centering, Comparison, LimitsConfig, LimitsError, ScalingRegime, TransientConfig};
use crate::regen::{self, RegenCycle};
use crate::rng::{self, tag};
use crate::stats;
use crate::walk::{self, StopRule, WalkConfig};

/// First line of every records file.
pub const RECORDS_MAGIC: &str = "#cookiewalk-records v1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("suite failed: {0}")]
    Run(String),
}

impl CliError {
    /// 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            _ => 1,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::ConfigInvalid(format!("{field}: {msg}"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

impl From<LimitsError> for CliError {
    fn from(e: LimitsError) -> CliError {
        match e {
            LimitsError::RegimeMismatch { .. } | LimitsError::InvalidParams(_) => invalid("regime", e),
            other => run_err(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Simulate,
    Classify,
    Duality,
    Regen,
    Tails,
    Limits,
    Multidim,
    Report,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Simulate => "simulate",
            Suite::Classify => "classify",
            Suite::Duality => "duality",
            Suite::Regen => "regen",
            Suite::Tails => "tails",
            Suite::Limits => "limits",
            Suite::Multidim => "multidim",
            Suite::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub weight: f64,
    pub right: Vec<f64>,
}

/// The `[model]` table; `kind` selects the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `M` cookies of strength `p` on Z.
    Omega { p: f64, m: usize },
    Placebo { dim: usize },
    Bw { dim: usize, p: f64 },
    /// Either `right = [p1, p2, ...]` (d = 1) or `cookies = [[..2d probs..], ...]`.
    Homogeneous {
        dim: Option<usize>,
        right: Option<Vec<f64>>,
        cookies: Option<Vec<Vec<f64>>>,
    },
    BoundedIid { max_cookies: Option<usize>, atoms: Vec<AtomSpec> },
    Trapping { eps: f64, mix: f64 },
    /// `q` fixed, or uniform on `[q_lo, q_hi]`.
    HaveYourCookie { q: Option<f64>, q_lo: Option<f64>, q_hi: Option<f64> },
    PerturbedExtrema { p: f64, q: f64 },
}

impl ModelSpec {
    pub fn to_model(&self) -> Result<StackModel, CliError> {
        let model = match self {
            ModelSpec::Omega { p, m } => StackModel::HomogeneousDeterministic {
                dim: 1,
                prefix: vec![right_cookie("model.p", *p)?; *m],
            },
            ModelSpec::Placebo { dim } => StackModel::placebo(*dim),
            ModelSpec::Bw { dim, p } => StackModel::Bw { dim: *dim, p: *p },
            ModelSpec::Homogeneous { dim, right, cookies } => {
                let prefix = match (right, cookies) {
                    (Some(r), None) => {
                        if dim.is_some_and(|d| d != 1) {
                            return Err(invalid("model.right", "only valid with dim = 1"));
                        }
                        r.iter()
                            .enumerate()
                            .map(|(i, &p)| right_cookie(&format!("model.right[{i}]"), p))
                            .collect::<Result<Vec<_>, _>>()?
                    }
                    (None, Some(cs)) => cs
                        .iter()
                        .enumerate()
                        .map(|(i, c)| Cookie::new(c.clone()).map_err(|e| invalid(&format!("model.cookies[{i}]"), e)))
                        .collect::<Result<Vec<_>, _>>()?,
                    _ => return Err(invalid("model", "homogeneous needs exactly one of `right`, `cookies`")),
                };
                let d = dim.unwrap_or(1);
                StackModel::HomogeneousDeterministic { dim: d, prefix }
            }
            ModelSpec::BoundedIid { max_cookies, atoms } => StackModel::BoundedIid {
                max_cookies: max_cookies.unwrap_or_else(|| atoms.iter().map(|a| a.right.len()).max().unwrap_or(0)),
                atoms: atoms.iter().map(|a| StackAtom { weight: a.weight, right: a.right.clone() }).collect(),
            },
            ModelSpec::Trapping { eps, mix } => StackModel::Trapping { eps: *eps, mix: *mix },
            ModelSpec::HaveYourCookie { q, q_lo, q_hi } => {
                let law = match (q, q_lo, q_hi) {
                    (Some(q), None, None) => RightLaw::Fixed(*q),
                    (None, Some(lo), Some(hi)) => RightLaw::Uniform { lo: *lo, hi: *hi },
                    _ => return Err(invalid("model", "have_your_cookie needs `q` or both `q_lo` and `q_hi`")),
                };
                StackModel::HaveYourCookie { law }
            }
            ModelSpec::PerturbedExtrema { p, q } => StackModel::PerturbedExtrema { p: *p, q: *q },
        };
        model.validate().map_err(|e| invalid("model", e))?;
        Ok(model)
    }
}

fn right_cookie(field: &str, p: f64) -> Result<Cookie, CliError> {
    Cookie::new(vec![p, 1.0 - p]).map_err(|e| invalid(field, e))
}

/// Optional pass/fail thresholds; a suite passes when every declared one holds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub expected_phase: Option<String>,
    pub expected_delta: Option<f64>,
    pub delta_tolerance: Option<f64>,
    pub min_return_fraction: Option<f64>,
    pub speed_ci_excludes_zero: Option<bool>,
    pub max_offspring_z: Option<f64>,
    pub sigma_index: Option<[f64; 2]>,
    pub progeny_index: Option<[f64; 2]>,
    pub tail_index: Option<[f64; 2]>,
    pub min_p_value: Option<f64>,
    pub max_ks_statistic: Option<f64>,
    pub require_ks_decrease: Option<bool>,
    pub max_relative_change: Option<f64>,
    pub max_transverse_z: Option<f64>,
    pub min_directional_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopSpec {
    Steps,
    FirstReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringSpec {
    Regeneration,
    FitHalf,
    FitHalfQuantiles,
}

fn default_replicas() -> u64 {
    1000
}
fn default_horizon() -> u64 {
    10_000
}
fn default_tail_fraction() -> f64 {
    0.05
}
fn default_tail_fractions() -> Vec<f64> {
    vec![0.02, 0.05, 0.1]
}
fn default_resamples() -> usize {
    1000
}
fn default_dt() -> f64 {
    1e-4
}
fn default_stop() -> StopSpec {
    StopSpec::Steps
}

/// A complete experiment description (see the README for the grammar).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: Option<Suite>,
    /// Master seed; mandatory (there is no clock-based fallback).
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    /// Walk length `n` (or the step budget for `first_return`).
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_stop")]
    pub stop: StopSpec,
    /// Levels `k` whose hitting times `T_k` go into simulate records.
    #[serde(default)]
    pub levels: Vec<i64>,
    /// Extra horizons: critical-case comparison times, or the first horizon of the δ = 2 ratio.
    #[serde(default)]
    pub horizons: Vec<u64>,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default = "default_tail_fractions")]
    pub tail_fractions: Vec<f64>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    pub burn_off: Option<u64>,
    /// Expected scaling regime for the limits suite: "i" … "v".
    pub regime: Option<String>,
    pub centering: Option<CenteringSpec>,
    #[serde(default)]
    pub use_sup: bool,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub sde_replicas: Option<u64>,
    /// Extra stacks sampled for a Monte Carlo δ in the classify suite.
    #[serde(default)]
    pub mc_samples: usize,
    /// Records file summarized by the report suite.
    pub input: Option<PathBuf>,
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        ExperimentConfig::from_toml(&text)
    }

    /// Canonical TOML of the effective config, hashed into the manifest.
    /// Worker count and output path do not affect results and are left out.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out = None;
        toml::to_string(&c).expect("config serializes")
    }

    fn suite(&self) -> Result<Suite, CliError> {
        self.suite.ok_or_else(|| invalid("suite", "missing"))
    }

    fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| invalid("seed", "missing (runs are never seeded from the clock)"))
    }

    fn model(&self) -> Result<StackModel, CliError> {
        self.model.as_ref().ok_or_else(|| invalid("model", "missing [model] table"))?.to_model()
    }

    /// Field-level checks that do not depend on the suite's computations.
    pub fn validate(&self) -> Result<(), CliError> {
        let suite = self.suite()?;
        self.seed()?;
        if self.replicas < 1 {
            return Err(invalid("replicas", "must be at least 1"));
        }
        if self.horizon < 1 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers", "must be at least 1"));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 0.2) {
            return Err(invalid("tail_fraction", "must lie in (0, 0.2]"));
        }
        if let Some(f) = self.tail_fractions.iter().find(|f| !(**f > 0.0 && **f <= 0.2)) {
            return Err(invalid("tail_fractions", format!("{f} outside (0, 0.2]")));
        }
        if self.resamples < 1 {
            return Err(invalid("resamples", "must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(invalid("dt", "must lie in (0, 1]"));
        }
        if let Some(r) = &self.regime {
            parse_regime(r)?;
        }
        match suite {
            Suite::Report => {
                if self.input.is_none() {
                    return Err(invalid("input", "the report suite needs an input records file"));
                }
            }
            _ => {
                self.model()?;
            }
        }
        Ok(())
    }
}

fn parse_regime(s: &str) -> Result<ScalingRegime, CliError> {
    Ok(match s.trim_matches(|c| c == '(' || c == ')') {
        "i" => ScalingRegime::I,
        "ii" => ScalingRegime::II,
        "iii" => ScalingRegime::III,
        "iv" => ScalingRegime::IV,
        "v" => ScalingRegime::V,
        other => return Err(invalid("regime", format!("unknown regime {other:?} (use i, ii, iii, iv or v)"))),
    })
}

/// One pass/fail check in a summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Value,
    pub threshold: Value,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub suite: String,
    pub model: Option<String>,
    pub seed: u64,
    pub statistics: Value,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub crate_name: String,
    pub version: String,
    pub suite: String,
    pub seed: u64,
    pub config_sha256: String,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.passed {
            0
        } else {
            1
        }
    }
}

/// Line-oriented records writer: magic line, header row, data rows.
pub struct RecordWriter {
    out: BufWriter<File>,
    path: PathBuf,
    width: usize,
}

impl RecordWriter {
    pub fn create(path: &Path, suite: Suite, fields: &[String]) -> Result<RecordWriter, CliError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = RecordWriter { out: BufWriter::new(file), path: path.to_path_buf(), width: fields.len() };
        w.line(&format!("{RECORDS_MAGIC} suite={}", suite.name()))?;
        w.line(&fields.join(","))?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<(), CliError> {
        writeln!(self.out, "{s}").map_err(io_err(&self.path))
    }

    pub fn row(&mut self, values: &[String]) -> Result<(), CliError> {
        debug_assert_eq!(values.len(), self.width);
        self.line(&values.join(","))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

fn fields(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Checks accumulate here while a suite computes.
#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, name: &str, value: Value, threshold: Value, passed: bool) {
        self.0.push(Check { name: name.into(), value, threshold, passed });
    }

    fn range(&mut self, name: &str, value: f64, range: Option<[f64; 2]>) {
        if let Some([lo, hi]) = range {
            self.push(name, json!(value), json!([lo, hi]), value >= lo && value <= hi);
        }
    }

    fn at_least(&mut self, name: &str, value: f64, min: Option<f64>) {
        if let Some(m) = min {
            self.push(name, json!(value), json!(m), value >= m);
        }
    }

    fn at_most(&mut self, name: &str, value: f64, max: Option<f64>) {
        if let Some(m) = max {
            self.push(name, json!(value), json!(m), value <= m);
        }
    }

    fn excludes_zero(&mut self, name: &str, ci: (f64, f64), wanted: Option<bool>) {
        if let Some(want) = wanted {
            let excludes = ci.0 > 0.0 || ci.1 < 0.0;
            self.push(name, json!([ci.0, ci.1]), json!(want), excludes == want);
        }
    }

    fn comparisons(&mut self, cmps: &[Comparison], t: &Thresholds) {
        for c in cmps {
            self.at_least(&format!("p_value: {}", c.label), c.p_value, t.min_p_value);
            self.at_most(&format!("ks_statistic: {}", c.label), c.statistic, t.max_ks_statistic);
        }
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    suite: Suite,
    seed: u64,
    workers: usize,
    records: PathBuf,
}

/// Runs the configured suite and writes `records.csv`, `summary.json` and
/// `manifest.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let suite = cfg.suite()?;
    let seed = cfg.seed()?;
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("cookiewalk-out"));
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let ctx = Ctx {
        cfg,
        suite,
        seed,
        workers: cfg.workers.unwrap_or_else(harness::default_workers),
        records: out_dir.join("records.csv"),
    };
    let mut checks = Checks::default();
    let statistics = match suite {
        Suite::Simulate => simulate(&ctx, &mut checks)?,
        Suite::Classify => classify(&ctx, &mut checks)?,
        Suite::Duality => duality(&ctx, &mut checks)?,
        Suite::Regen => regen_suite(&ctx, &mut checks)?,
        Suite::Tails => tails(&ctx, &mut checks)?,
        Suite::Limits => limits_suite(&ctx, &mut checks)?,
        Suite::Multidim => multidim(&ctx, &mut checks)?,
        Suite::Report => report(&ctx)?,
    };
    let passed = checks.0.iter().all(|c| c.passed);
    let summary = Summary {
        suite: suite.name().into(),
        model: cfg.model.as_ref().map(|_| cfg.model().map(|m| m.id())).transpose()?,
        seed,
        statistics,
        checks: checks.0,
        passed,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    let manifest = Manifest {
        crate_name: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        suite: suite.name().into(),
        seed,
        config_sha256: sha256_hex(cfg.canonical().as_bytes()),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(Outcome { summary, out_dir })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(run_err)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

// ---------------------------------------------------------------------------
// Suites

struct SimRow {
    env_seed: u64,
    time: u64,
    position: Vec<i64>,
    sup: i64,
    inf: i64,
    range: u64,
    max_local_time: u32,
    first_return: Option<u64>,
    hits: Vec<Option<u64>>,
}

fn simulate(ctx: &Ctx<'_>, checks: &mut Checks) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let model = cfg.model()?;
    let dim = model.dim();
    let stop = match cfg.stop {
        StopSpec::Steps => StopRule::Steps(cfg.horizon),
        StopSpec::FirstReturn => StopRule::FirstReturn { max_steps: cfg.horizon },
    };
    let wcfg = WalkConfig::new(dim, stop);
    let rows = walk::batch_map(&model, &wcfg, ctx.seed, cfg.replicas, ctx.workers, |_, t, _| {
        t.map(|t| SimRow {
            env_seed: t.env_seed,
            time: t.time,
            position: t.position.coords(),
            sup: t.sup,
            inf: t.inf,
            range: t.range,
            max_local_time: t.max_local_time,
            first_return: t.first_return,
            hits: cfg
                .levels
                .iter()
                .map(|&k| {
                    if k >= 0 {
                        t.hits_up.get(k as usize).copied()
                    } else {
                        t.hits_down.get((-k - 1) as usize).copied()
                    }
                })
                .collect(),
        })
    });
    let rows: Vec<SimRow> = rows.into_iter().collect::<Result<_, _>>().map_err(run_err)?;
    let mut names = fields(&["index", "seed", "model", "n"]);
    names.extend((1..=dim).map(|j| format!("x{j}")));
    names.extend(fields(&["sup", "inf", "range", "max_local_time", "first_return"]));
    names.extend(cfg.levels.iter().map(|k| format!("T_{k}")));
    let mut w = RecordWriter::create(&ctx.records, ctx.suite, &names)?;
    let id = model.id();
    for (i, r) in rows.iter().enumerate() {
        let mut v = vec![i.to_string(), r.env_seed.to_string(), id.clone(), r.time.to_string()];
        v.extend(r.position.iter().map(|x| x.to_string()));
        v.extend([r.sup.to_string(), r.inf.to_string(), r.range.to_string(), r.max_local_time.to_string(), opt(r.first_return)]);
        v.extend(r.hits.iter().map(|h| opt(*h)));
        w.row(&v)?;
    }
    w.finish()?;

    let speeds: Vec<f64> = rows.iter().map(|r| r.position[0] as f64 / r.time.max(1) as f64).collect();
    let mut boot = rng::rng_from(ctx.seed, &[tag::BOOTSTRAP]);
    let speed = stats::bootstrap_ci(&speeds, stats::mean, cfg.resamples, 0.95, &mut boot).map_err(run_err)?;
    let returned = rows.iter().filter(|r| r.first_return.is_some()).count() as f64;
    let m = rows.len() as f64;
    let frac = returned / m;
    let half = 1.96 * (frac * (1.0 - frac) / m).sqrt();
    let ranges: Vec<f64> = rows.iter().map(|r| r.range as f64).collect();
    let xi: Vec<f64> = rows.iter().map(|r| r.max_local_time as f64).collect();
    checks.excludes_zero("speed CI excludes 0", (speed.lo, speed.hi), cfg.thresholds.speed_ci_excludes_zero);
    if cfg.stop == StopSpec::FirstReturn {
        checks.at_least("return fraction", frac, cfg.thresholds.min_return_fraction);
    }
    Ok(json!({
        "replicas": rows.len(),
        "horizon": cfg.horizon,
        "speed": speed,
        "mean_range": stats::mean(&ranges),
        "mean_max_local_time": stats::mean(&xi),
        "return_fraction": frac,
        "return_fraction_ci": [frac - half, frac + half],
    }))
}

fn classify(ctx: &Ctx<'_>, checks: &mut Checks) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let model = cfg.model()?;
    let delta = match env::delta(&model) {
        Ok(d) => d,
        Err(EnvError::NonSummableDrift) => vec![f64::NAN; model.dim()],
        Err(e) => return Err(invalid("model", e)),
    };
    let phase = classify_phase(delta[0]).to_string();
    let mc = if cfg.mc_samples > 0 {
        let mut r = rng::rng_from(ctx.seed, &[tag::MISC]);
        Some(env::delta_monte_carlo(&model, cfg.mc_samples, &mut r).map_err(run_err)?)
    } else {
        None
    };
    let mut w = RecordWriter::create(&ctx.records, ctx.suite, &fields(&["axis", "delta", "mc_mean", "mc_se"]))?;
    for (j, d) in delta.iter().enumerate() {
        let (mm, ms) = mc.as_ref().map_or((None, None), |(m, s)| (Some(m[j]), Some(s[j])));
        w.row(&[(j + 1).to_string(), d.to_string(), opt(mm), opt(ms)])?;
    }
    w.finish()?;
    let t = &cfg.thresholds;
    if let Some(p) = &t.expected_phase {
        checks.push("phase", json!(phase), json!(p), &phase == p);
    }
    if let Some(d) = t.expected_delta {
        let tol = t.delta_tolerance.unwrap_or(1e-9);
        checks.push("delta", json!(delta[0]), json!([d, tol]), (delta[0] - d).abs() <= tol);
    }
    Ok(json!({
        "delta": if delta[0].is_finite() { json!(delta[0]) } else { json!("non_summable") },
        "delta_vector": delta.iter().map(|d| if d.is_finite() { json!(d) } else { Value::Null }).collect::<Vec<_>>(),
        "phase": phase,
        "phase_advisory": model.dim() > 1 || !model.is_iid(),
        "monte_carlo": mc.map(|(m, s)| json!({"mean": m, "se": s, "samples": cfg.mc_samples})),
    }))
}

fn life_cycles(ctx: &Ctx<'_>, model: &StackModel) -> Result<Vec<(u64, crate::branching::LifeCycle)>, CliError> {
    let dual = DualProcess::new(model).map_err(|e| invalid("model", e))?;
    Ok(harness::run_indexed(ctx.cfg.replicas, ctx.workers, |i| {
        let s = rng::derive_seed(ctx.seed, &[tag::CYCLE, i]);
        (s, dual.cycle(&mut rng::rng_from(s, &[]), Caps::default(), false).0)
    }))
}

fn write_cycles(ctx: &Ctx<'_>, model: &StackModel, cycles: &[(u64, crate::branching::LifeCycle)]) -> Result<(), CliError> {
    let mut w = RecordWriter::create(
        &ctx.records,
        ctx.suite,
        &fields(&["index", "seed", "model", "sigma", "progeny", "truncated"]),
    )?;
    let id = model.id();
    for (i, (s, c)) in cycles.iter().enumerate() {
        w.row(&[i.to_string(), s.to_string(), id.clone(), c.sigma.to_string(), c.progeny.to_string(), c.truncated.to_string()])?;
    }
    w.finish()
}

fn duality(ctx: &Ctx<'_>, checks: &mut Checks) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let model = cfg.model()?;
    let cycles = life_cycles(ctx, &model)?;
    write_cycles(ctx, &model, &cycles)?;
    let done: Vec<_> = cycles.iter().filter(|(_, c)| !c.truncated).map(|(_, c)| *c).collect();
    let sig: Vec<f64> = done.iter().map(|c| c.sigma as f64).collect();
    let prog: Vec<f64> = done.iter().map(|c| c.progeny as f64).collect();
    let dual = DualProcess::new(&model).map_err(|e| invalid("model", e))?;
    let m = model.max_cookies().unwrap_or(1) as u64;
    let excess: Vec<f64> = harness::run_indexed(cfg.replicas, ctx.workers, |i| {
        dual.offspring_excess(m, &mut rng::rng_from(ctx.seed, &[tag::MISC, i])) as f64
    });
    let delta = env::delta_e1(&model).map_err(|e| invalid("model", e))?;
    let (mean, se) = (stats::mean(&excess), stats::std_error(&excess));
    let z = if se > 0.0 { (mean - (1.0 - delta)).abs() / se } else if mean == 1.0 - delta { 0.0 } else { f64::INFINITY };
    checks.at_most("offspring identity |z|", z, cfg.thresholds.max_offspring_z);
    Ok(json!({
        "cycles": cycles.len(),
        "truncated": cycles.len() - done.len(),
        "mean_sigma": if sig.is_empty() { Value::Null } else { json!(stats::mean(&sig)) },
        "mean_progeny": if prog.is_empty() { Value::Null } else { json!(stats::mean(&prog)) },
        "offspring_excess": {"M": m, "mean": mean, "se": se, "expected": 1.0 - delta, "z": z},
    }))
}

fn tails(ctx: &Ctx<'_>, checks: &mut Checks) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let model = cfg.model()?;
    let cycles = life_cycles(ctx, &model)?;
    write_cycles(ctx, &model, &cycles)?;
    let done: Vec<_> = cycles.iter().filter(|(_, c)| !c.truncated).map(|(_, c)| *c).collect();
    let mut r = rng::rng_from(ctx.seed, &[tag::MISC]);
    let sig = stats::jitter(&done.iter().map(|c| c.sigma).collect::<Vec<_>>(), &mut r);
    let prog = stats::jitter(&done.iter().map(|c| c.progeny).collect::<Vec<_>>(), &mut r);
    let est = |xs: &[f64], f: f64| stats::tail_index(xs, f).map_err(run_err);
    let s = est(&sig, cfg.tail_fraction)?;
    let a = est(&prog, cfg.tail_fraction)?;
    let mut sensitivity = Vec::new();
    for &f in &cfg.tail_fractions {
        sensitivity.push(json!({"fraction": f, "sigma": est(&sig, f)?.index, "progeny": est(&prog, f)?.index}));
    }
    checks.range("sigma tail index", s.index, cfg.thresholds.sigma_index);
    checks.range("progeny tail index", a.index, cfg.thresholds.progeny_index);
    let delta = env::delta_e1(&model).ok();
    Ok(json!({
        "cycles": done.len(),
        "truncated": cycles.len() - done.len(),
        "tail_fraction": cfg.tail_fraction,
        "sigma": {"index": s.index, "ci": [s.ci.0, s.ci.1], "k": s.k, "loglog_slope": s.loglog_slope, "expected": delta},
        "progeny": {"index": a.index, "ci": [a.ci.0, a.ci.1], "k": a.k, "loglog_slope": a.loglog_slope, "expected": delta.map(|d| d / 2.0)},
        "sensitivity": sensitivity,
    }))
}

fn regen_suite(ctx: &Ctx<'_>, checks: &mut Checks) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let model = cfg.model()?;
    let ell = regen::axis_direction(model.dim());
    let wcfg = WalkConfig::steps(model.dim(), cfg.horizon).with_path();
    let per = walk::batch_map(&model, &wcfg, ctx.seed, cfg.replicas, ctx.workers, |_, t, _| {
        let t = t.map_err(run_err)?;
        let taus = regen::find_regenerations(&t, &ell, cfg.burn_off).map_err(run_err)?;
        let (_, cyc) = regen::cycles(&t, &ell, &taus).map_err(run_err)?;
        Ok::<_, CliError>((t.env_seed, cyc))
    });
    let per: Vec<(u64, Vec<RegenCycle>)> = per.into_iter().collect::<Result<_, _>>()?;
    let mut w = RecordWriter::create(
        &ctx.records,
        ctx.suite,
        &fields(&["seed", "model", "replica", "i", "duration", "displacement"]),
    )?;
    let id = model.id();
    for (rep, (s, cyc)) in per.iter().enumerate() {
        for c in cyc {
            w.row(&[s.to_string(), id.clone(), rep.to_string(), c.index.to_string(), c.duration.to_string(), c.displacement.to_string()])?;
        }
    }
    w.finish()?;
    // Replicas are independent; resampling whole replicas keeps the bootstrap
    // cheap when there are millions of cycles.
    let totals: Vec<regen::CycleTotals> = per.iter().map(|(_, c)| regen::CycleTotals::from_cycles(c, 20)).collect();
    let cycles: u64 = totals.iter().map(|t| t.cycles).sum();
    let mut boot = rng::rng_from(ctx.seed, &[tag::BOOTSTRAP]);
    let est = if per.len() >= 2 {
        regen::speed_from_totals(&totals, cfg.resamples, 0.95, &mut boot)
    } else {
        let all: Vec<RegenCycle> = per.into_iter().flat_map(|(_, c)| c).collect();
        regen::speed_estimate(&all, cfg.resamples, 0.95, &mut boot)
    };
    let speed = match est {
        Ok(s) => s,
        Err(e @ regen::RegenError::TooFewCycles { .. }) => {
            checks.push("speed estimate", json!(e.to_string()), json!("available"), false);
            return Ok(json!({"cycles": cycles, "speed": Value::Null}));
        }
        Err(e) => return Err(run_err(e)),
    };
    checks.excludes_zero("speed CI excludes 0", speed.ci, cfg.thresholds.speed_ci_excludes_zero);
    Ok(json!({"cycles": cycles, "speed": speed}))
}

fn write_comparisons(ctx: &Ctx<'_>, cmps: &[Comparison]) -> Result<(), CliError> {
    let mut w = RecordWriter::create(
        &ctx.records,
        ctx.suite,
        &fields(&["label", "sample_size", "fit_size", "reference_size", "fitted_scale", "statistic", "p_value", "seed", "reference_seed"]),
    )?;
    for c in cmps {
        w.row(&[
            c.label.replace(',', ";"),
            c.sample_size.to_string(),
            c.fit_size.to_string(),
            c.reference_size.to_string(),
            opt(c.fitted_scale),
            c.statistic.to_string(),
            c.p_value.to_string(),
            c.seed.to_string(),
            c.reference_seed.to_string(),
        ])?;
    }
    w.finish()
}

fn limits_suite(ctx: &Ctx<'_>, checks: &mut Checks) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let model = cfg.model()?;
    if model.dim() != 1 {
        return Err(invalid("model", "the limits suite is one-dimensional; use multidim"));
    }
    let delta = env::delta_e1(&model).map_err(|e| invalid("model", e))?;
    let mut base = LimitsConfig::new(cfg.horizon, cfg.replicas, ctx.seed);
    base.workers = ctx.workers;
    base.dt = cfg.dt;
    base.sde_replicas = cfg.sde_replicas.unwrap_or(cfg.replicas);
    let t = &cfg.thresholds;
    let wanted = cfg.regime.as_deref().map(parse_regime).transpose()?;
    if delta.abs() < 1.0 || (delta - 1.0).abs() < 1e-9 {
        if let Some(r) = wanted {
            return Err(invalid("regime", format!("regime {r} requested but delta = {delta}")));
        }
    }
    if (0.0..1.0).contains(&delta) {
        let rep = limits::recurrent_limit_check(&model, &base)?;
        let cmps = [rep.comparison.clone()];
        write_comparisons(ctx, &cmps)?;
        checks.comparisons(&cmps, t);
        return serde_json::to_value(&rep).map_err(run_err).map(|v| json!({"kind": "recurrent", "report": v}));
    }
    if (delta - 1.0).abs() < 1e-9 {
        let mut hs = cfg.horizons.clone();
        hs.push(cfg.horizon);
        let rep = limits::critical_limit_check(&model, &hs, &base)?;
        write_comparisons(ctx, &rep.comparisons)?;
        checks.comparisons(&rep.comparisons, t);
        if t.require_ks_decrease == Some(true) {
            let (first, last) = (rep.comparisons[0].statistic, rep.comparisons[rep.comparisons.len() - 1].statistic);
            checks.push("KS statistic decreases with n", json!([first, last]), json!(true), last < first);
        }
        return serde_json::to_value(&rep).map_err(run_err).map(|v| json!({"kind": "critical", "report": v}));
    }
    let regime = match (wanted, ScalingRegime::for_delta(delta)) {
        (Some(r), _) => r,
        (None, Some(r)) => r,
        (None, None) => return Err(invalid("model", format!("no scaling regime for delta = {delta}"))),
    };
    let mut tc = TransientConfig::new(cfg.horizon, cfg.replicas, ctx.seed);
    tc.base = base;
    tc.use_sup = cfg.use_sup;
    tc.tail_fraction = cfg.tail_fraction;
    tc.bootstrap_resamples = cfg.resamples;
    tc.speed_replicas = cfg.replicas.min(200);
    if let Some(&h) = cfg.horizons.first() {
        tc.ratio_horizon = h;
    }
    tc.centering = match cfg.centering {
        None | Some(CenteringSpec::Regeneration) => Centering::Regeneration,
        Some(CenteringSpec::FitHalf) => Centering::FitHalf,
        Some(CenteringSpec::FitHalfQuantiles) => Centering::FitHalfQuantiles,
    };
    let rep = limits::transient_marginal_check(&model, regime, &tc, None)?;
    write_comparisons(ctx, &rep.comparisons)?;
    checks.comparisons(&rep.comparisons, t);
    if let Some(tail) = &rep.tail {
        checks.range("tail index of eta_n(1)", tail.index, t.tail_index);
    }
    if let Some(ratio) = &rep.ratio {
        checks.at_most("ratio relative change", ratio.relative_change, t.max_relative_change);
    }
    serde_json::to_value(&rep).map_err(run_err).map(|v| json!({"kind": "transient", "report": v}))
}

fn multidim(ctx: &Ctx<'_>, checks: &mut Checks) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let model = cfg.model()?;
    let mut base = LimitsConfig::new(cfg.horizon, cfg.replicas, ctx.seed);
    base.workers = ctx.workers;
    let rep = limits::multidim_checks(&model, &base, cfg.resamples).map_err(|e| match e {
        LimitsError::InvalidParams(m) => invalid("model", m),
        other => run_err(other),
    })?;
    write_comparisons(ctx, &rep.normality)?;
    let t = &cfg.thresholds;
    checks.excludes_zero("v.e1 CI excludes 0", (rep.speed.lo, rep.speed.hi), t.speed_ci_excludes_zero);
    for (j, (m, se)) in rep.transverse.iter().enumerate() {
        let z = if *se > 0.0 { m.abs() / se } else { 0.0 };
        checks.at_most(&format!("transverse mean |z|, axis {}", j + 2), z, t.max_transverse_z);
    }
    checks.comparisons(&rep.normality, t);
    checks.at_least("directional transience fraction", rep.directional_fraction, t.min_directional_fraction);
    serde_json::to_value(&rep).map_err(run_err)
}

/// Summarizes every numeric column of an existing records file.
fn report(ctx: &Ctx<'_>) -> Result<Value, CliError> {
    let input = ctx.cfg.input.as_ref().expect("validated");
    let file = File::open(input).map_err(io_err(input))?;
    let mut lines = BufReader::new(file).lines();
    let magic = lines.next().transpose().map_err(io_err(input))?.unwrap_or_default();
    if !magic.starts_with(RECORDS_MAGIC) {
        return Err(invalid("input", format!("{} is not a records file", input.display())));
    }
    let header = lines.next().transpose().map_err(io_err(input))?.unwrap_or_default();
    let names: Vec<&str> = header.split(',').collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut numeric = vec![true; names.len()];
    let mut rows = 0usize;
    for line in lines {
        let line = line.map_err(io_err(input))?;
        rows += 1;
        for (j, cell) in line.split(',').enumerate().take(names.len()) {
            if cell.is_empty() {
                continue;
            }
            match cell.parse::<f64>() {
                Ok(x) if numeric[j] => columns[j].push(x),
                _ => numeric[j] = false,
            }
        }
    }
    let mut w = RecordWriter::create(
        &ctx.records,
        ctx.suite,
        &fields(&["column", "count", "mean", "se", "q1", "median", "q3"]),
    )?;
    let mut out = serde_json::Map::new();
    for (j, name) in names.iter().enumerate() {
        let col = &columns[j];
        if !numeric[j] || col.is_empty() {
            continue;
        }
        let q = stats::quartiles(col);
        let se = if col.len() > 1 { stats::std_error(col) } else { f64::NAN };
        w.row(&[name.to_string(), col.len().to_string(), stats::mean(col).to_string(), se.to_string(), q[0].to_string(), q[1].to_string(), q[2].to_string()])?;
        out.insert(
            name.to_string(),
            json!({"count": col.len(), "mean": stats::mean(col), "se": if se.is_finite() { json!(se) } else { Value::Null }, "quartiles": q}),
        );
    }
    w.finish()?;
    Ok(json!({"input": input.display().to_string(), "source_suite": magic.trim_start_matches(RECORDS_MAGIC).trim(), "rows": rows, "columns": out}))
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Clone)]
pub enum Command {
    /// Run walks and record endpoints, extrema, range and hitting times.
    Simulate(CommonArgs),
    /// Compute δ and the phase of the model.
    Classify(CommonArgs),
    /// Life cycles of the dual branching process and the mean-offspring identity.
    Duality(CommonArgs),
    /// Regeneration cycles and the speed estimate.
    Regen(CommonArgs),
    /// Tail indices of life-cycle durations and progenies.
    Tails(CommonArgs),
    /// Scaling-limit comparison for the model's δ.
    Limits(CommonArgs),
    /// Directional transience, speed and normality in d ≥ 2.
    Multidim(CommonArgs),
    /// Summarize an existing records file.
    Report(CommonArgs),
}

#[derive(Debug, Parser)]
#[command(name = "cookiewalk", version, about = "Batch experiments for excited random walks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Command {
    fn split(&self) -> (Suite, &CommonArgs) {
        match self {
            Command::Simulate(a) => (Suite::Simulate, a),
            Command::Classify(a) => (Suite::Classify, a),
            Command::Duality(a) => (Suite::Duality, a),
            Command::Regen(a) => (Suite::Regen, a),
            Command::Tails(a) => (Suite::Tails, a),
            Command::Limits(a) => (Suite::Limits, a),
            Command::Multidim(a) => (Suite::Multidim, a),
            Command::Report(a) => (Suite::Report, a),
        }
    }
}

/// Loads the config named on the command line and applies the flag overrides.
pub fn resolve(command: &Command) -> Result<ExperimentConfig, CliError> {
    let (suite, args) = command.split();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    match cfg.suite {
        Some(s) if s != suite => {
            return Err(invalid("suite", format!("config says {:?} but the command is {}", s.name(), suite.name())))
        }
        _ => cfg.suite = Some(suite),
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if let (Some(input), Some(dir)) = (&cfg.input, args.config.parent()) {
        if input.is_relative() && !input.exists() {
            cfg.input = Some(dir.join(input));
        }
    }
    Ok(cfg)
}

/// Entry point shared by the binary: parses arguments, runs, returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = resolve(&cli.command).and_then(|cfg| run_experiment(&cfg));
    match outcome {
        Ok(o) => {
            for c in &o.summary.checks {
                println!("{} {}: {} (threshold {})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            println!(
                "{} {} -> {}",
                o.summary.suite,
                if o.summary.passed { "passed" } else { "failed" },
                o.out_dir.display()
            );
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OMEGA: &str = "seed = 1\nsuite = \"classify\"\n[model]\nkind = \"omega\"\np = 0.8\nm = 5\n";

    #[test]
    fn parses_and_builds_models() {
        let cfg = ExperimentConfig::from_toml(OMEGA).unwrap();
        assert_eq!(cfg.model().unwrap(), StackModel::omega(0.8, 5));
        let hyc = "kind = \"have_your_cookie\"\nq_lo = 0.5\nq_hi = 0.9\n";
        let spec: ModelSpec = toml::from_str(hyc).unwrap();
        assert_eq!(spec.to_model().unwrap(), StackModel::HaveYourCookie { law: RightLaw::Uniform { lo: 0.5, hi: 0.9 } });
        let iid = "kind = \"bounded_iid\"\natoms = [{ weight = 0.5, right = [0.9, 0.9] }, { weight = 0.5, right = [0.2] }]\n";
        let spec: ModelSpec = toml::from_str(iid).unwrap();
        assert!(matches!(spec.to_model().unwrap(), StackModel::BoundedIid { max_cookies: 2, .. }));
    }

    #[test]
    fn field_level_diagnostics() {
        let no_seed = OMEGA.replace("seed = 1\n", "");
        let e = ExperimentConfig::from_toml(&no_seed).unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let bad_p = OMEGA.replace("p = 0.8", "p = 1.5");
        assert!(ExperimentConfig::from_toml(&bad_p).unwrap().validate().unwrap_err().to_string().contains("model"));
        let unknown = format!("{OMEGA}colour = 3\n");
        assert!(matches!(ExperimentConfig::from_toml(&unknown), Err(CliError::ConfigInvalid(_))));
        let zero = format!("replicas = 0\n{OMEGA}");
        assert!(ExperimentConfig::from_toml(&zero).unwrap().validate().unwrap_err().to_string().contains("replicas"));
    }

    #[test]
    fn regime_names() {
        assert_eq!(parse_regime("iii").unwrap(), ScalingRegime::III);
        assert_eq!(parse_regime("(v)").unwrap(), ScalingRegime::V);
        assert!(parse_regime("vi").is_err());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
