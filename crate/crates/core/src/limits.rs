//! Scaling-limit checks.
//!
//! Every check compares one-dimensional marginals of rescaled walks against a
//! reference law: perturbed Brownian motion in the recurrent case, the running
//! maximum of Brownian motion at δ = 1, totally skewed stable laws for δ > 1,
//! and a Gaussian for the ballistic walk in d ≥ 2. Unknown scale constants are
//! fit by median matching on one half of the sample and tested on the other.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::branching::{BranchError, DualProcess};
use crate::env::{self, EnvError, StackModel};
use crate::harness;
use crate::regen::{self, RegenError, SpeedEstimate};
use crate::rng::{self, tag, WalkRng};
use crate::stats::{self, KsResult, StableParams, StatsError};
use crate::walk::{self, ReplicaSummary, WalkConfig, WalkError};

/// Median of `|N(0,1)|`.
const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;
const DELTA_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LimitsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("residual {residual:.3e} exceeds {bound:.3e} at t = {time}")]
    ResidualExceeded { time: f64, residual: f64, bound: f64 },
    #[error("regime {regime} does not match delta = {delta}")]
    RegimeMismatch { regime: String, delta: f64 },
    #[error("speed unavailable: {0}")]
    SpeedUnavailable(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Regen(#[from] RegenError),
    #[error(transparent)]
    Branch(#[from] BranchError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

// ---------------------------------------------------------------------------
// Perturbed Brownian motion

/// `X = B + α sup X + β inf X` on `[0, horizon]`, discretized with step `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbedBmParams {
    pub alpha: f64,
    pub beta: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl PerturbedBmParams {
    pub fn new(alpha: f64, beta: f64, horizon: f64, dt: f64) -> Result<PerturbedBmParams, LimitsError> {
        if !(alpha < 1.0 && beta < 1.0) {
            return Err(LimitsError::InvalidParams(format!("need alpha, beta < 1, got {alpha}, {beta}")));
        }
        if !(dt > 0.0 && horizon > 0.0 && dt <= horizon) {
            return Err(LimitsError::InvalidParams(format!("need 0 < dt <= horizon, got dt={dt}, horizon={horizon}")));
        }
        Ok(PerturbedBmParams { alpha, beta, horizon, dt })
    }

    /// Residual tolerance `10 √dt`.
    pub fn residual_bound(&self) -> f64 {
        10.0 * self.dt.sqrt()
    }
}

/// Values of one simulated path at the requested times.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedBmPath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    /// The driving Brownian motion.
    pub b: Vec<f64>,
    /// Running maximum of the driving Brownian motion.
    pub b_max: Vec<f64>,
    /// Largest `|X − B − α sup X − β inf X|` over all steps.
    pub max_residual: f64,
}

/// Euler scheme with running extrema. A tentative step `y = x + ΔB` that
/// overshoots the running maximum `S` lands at `S + (y − S)/(1 − α)` (at the
/// maximum `dX = dB + α dX`); undershoots of the minimum are amplified by
/// `1/(1 − β)`. `times` must lie in `(0, horizon]`.
pub fn simulate_perturbed_bm<R: RngCore + ?Sized>(
    params: &PerturbedBmParams,
    times: &[f64],
    rng: &mut R,
) -> Result<PerturbedBmPath, LimitsError> {
    let mut wanted: Vec<f64> = times.to_vec();
    wanted.sort_by(f64::total_cmp);
    if wanted.iter().any(|&t| !(t > 0.0 && t <= params.horizon * (1.0 + 1e-12))) {
        return Err(LimitsError::InvalidParams("sample times must lie in (0, horizon]".into()));
    }
    let PerturbedBmParams { alpha, beta, dt, .. } = *params;
    let sd = dt.sqrt();
    let bound = params.residual_bound();
    let (ka, kb) = (1.0 / (1.0 - alpha), 1.0 / (1.0 - beta));
    let (mut x, mut b, mut s, mut i, mut b_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut out = PerturbedBmPath {
        times: wanted.clone(),
        x: Vec::with_capacity(wanted.len()),
        b: Vec::with_capacity(wanted.len()),
        b_max: Vec::with_capacity(wanted.len()),
        max_residual: 0.0,
    };
    let mut step: u64 = 0;
    for &t in &wanted {
        let target = (t / dt).round() as u64;
        while step < target {
            let z: f64 = StandardNormal.sample(rng);
            let db = sd * z;
            b += db;
            b_max = b_max.max(b);
            let y = x + db;
            if y > s {
                x = s + (y - s) * ka;
                s = x;
            } else if y < i {
                x = i + (y - i) * kb;
                i = x;
            } else {
                x = y;
            }
            step += 1;
            let r = (x - b - alpha * s - beta * i).abs();
            if r > out.max_residual {
                out.max_residual = r;
                if r >= bound {
                    return Err(LimitsError::ResidualExceeded { time: step as f64 * dt, residual: r, bound });
                }
            }
        }
        out.x.push(x);
        out.b.push(b);
        out.b_max.push(b_max);
    }
    Ok(out)
}

/// `replicas` independent paths; path `i` uses the stream `(seed, SDE, i)`.
pub fn perturbed_bm_batch(
    params: &PerturbedBmParams,
    times: &[f64],
    seed: u64,
    replicas: u64,
    workers: usize,
) -> Result<Vec<PerturbedBmPath>, LimitsError> {
    harness::run_indexed(replicas, workers, |i| {
        simulate_perturbed_bm(params, times, &mut rng::rng_from(seed, &[tag::SDE, i]))
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// Comparison records

/// One KS comparison between a rescaled walk statistic and a reference law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub label: String,
    /// Samples entering the KS test (the test half when a scale was fit).
    pub sample_size: usize,
    /// Samples used only to fit the scale.
    pub fit_size: usize,
    /// Reference sample size; 0 when compared against an exact CDF.
    pub reference_size: usize,
    /// Multiplicative scale `c` with `sample ≈ c · reference`.
    pub fitted_scale: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub approximate: bool,
    pub quartiles: [f64; 3],
    pub reference_quartiles: [f64; 3],
    pub seed: u64,
    pub reference_seed: u64,
}

impl Comparison {
    fn new(label: &str, tested: &[f64], reference_q: [f64; 3], ks: KsResult) -> Comparison {
        Comparison {
            label: label.to_string(),
            sample_size: tested.len(),
            fit_size: 0,
            reference_size: 0,
            fitted_scale: None,
            statistic: ks.statistic,
            p_value: ks.p_value,
            approximate: ks.approximate,
            quartiles: stats::quartiles(tested),
            reference_quartiles: reference_q,
            seed: 0,
            reference_seed: 0,
        }
    }

    fn seeds(mut self, seed: u64, reference_seed: u64) -> Comparison {
        self.seed = seed;
        self.reference_seed = reference_seed;
        self
    }
}

/// Unscaled two-sample comparison.
pub fn compare_samples(label: &str, sample: &[f64], reference: &[f64]) -> Result<Comparison, LimitsError> {
    let ks = stats::ks_two_sample(sample, reference)?;
    let mut c = Comparison::new(label, sample, stats::quartiles(reference), ks);
    c.reference_size = reference.len();
    Ok(c)
}

/// Even-indexed samples fit, odd-indexed samples test.
fn split(samples: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let fit = samples.iter().step_by(2).copied().collect();
    let test = samples.iter().skip(1).step_by(2).copied().collect();
    (fit, test)
}

fn median_abs(xs: &[f64]) -> f64 {
    stats::median(&xs.iter().map(|x| x.abs()).collect::<Vec<_>>())
}

/// Split-sample scale fit: `c = median|fit half| / median|reference|`, then
/// KS between `test half / c` and the reference sample.
pub fn scale_fit_compare(label: &str, samples: &[f64], reference: &[f64]) -> Result<Comparison, LimitsError> {
    if samples.len() < 4 {
        return Err(StatsError::TooFewSamples { needed: 4, got: samples.len() }.into());
    }
    let (fit, test) = split(samples);
    let c = median_abs(&fit) / median_abs(reference);
    if !(c.is_finite() && c > 0.0) {
        return Err(StatsError::DegenerateTail(format!("scale fit gave {c}")).into());
    }
    let scaled: Vec<f64> = test.iter().map(|x| x / c).collect();
    let mut out = compare_samples(label, &scaled, reference)?;
    out.fit_size = fit.len();
    out.fitted_scale = Some(c);
    Ok(out)
}

/// Split-sample scale fit against an exact CDF with known `median|·|` and quartiles.
pub fn scale_fit_compare_cdf<F: Fn(f64) -> f64>(
    label: &str,
    samples: &[f64],
    cdf: F,
    reference_median_abs: f64,
    reference_quartiles: [f64; 3],
) -> Result<Comparison, LimitsError> {
    if samples.len() < 4 {
        return Err(StatsError::TooFewSamples { needed: 4, got: samples.len() }.into());
    }
    let (fit, test) = split(samples);
    let c = median_abs(&fit) / reference_median_abs;
    if !(c.is_finite() && c > 0.0) {
        return Err(StatsError::DegenerateTail(format!("scale fit gave {c}")).into());
    }
    let scaled: Vec<f64> = test.iter().map(|x| x / c).collect();
    let ks = stats::ks_one_sample(&scaled, cdf)?;
    let mut out = Comparison::new(label, &scaled, reference_quartiles, ks);
    out.fit_size = fit.len();
    out.fitted_scale = Some(c);
    Ok(out)
}

/// Plot data: both empirical CDFs on a grid of `points` pooled quantiles,
/// as `(x, F_sample(x), F_reference(x))` rows.
pub fn ecdf_pairs(sample: &[f64], reference: &[f64], points: usize) -> Result<Vec<[f64; 3]>, LimitsError> {
    let a = stats::ecdf(sample)?;
    let b = stats::ecdf(reference)?;
    let mut pooled: Vec<f64> = sample.iter().chain(reference).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let points = points.max(2);
    Ok((0..points)
        .map(|k| {
            let x = stats::quantile_sorted(&pooled, k as f64 / (points - 1) as f64);
            [x, a.eval(x), b.eval(x)]
        })
        .collect())
}

fn half_normal_quartiles() -> [f64; 3] {
    [0.318_639_363_964_375_4, HALF_NORMAL_MEDIAN, 1.150_349_380_376_008]
}

// ---------------------------------------------------------------------------
// Shared batch parameters

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitsConfig {
    /// Walk length.
    pub n: u64,
    /// Walk replicas.
    pub replicas: u64,
    pub seed: u64,
    pub workers: usize,
    /// Euler step for perturbed Brownian motion.
    pub dt: f64,
    /// Perturbed Brownian motion paths.
    pub sde_replicas: u64,
    /// Reference draws for stable laws.
    pub reference_size: usize,
}

impl LimitsConfig {
    pub fn new(n: u64, replicas: u64, seed: u64) -> LimitsConfig {
        LimitsConfig {
            n,
            replicas,
            seed,
            workers: harness::default_workers(),
            dt: 1e-4,
            sde_replicas: replicas,
            reference_size: 100_000,
        }
    }

    fn check(&self) -> Result<(), LimitsError> {
        if self.n < 2 || self.replicas < 4 {
            return Err(LimitsError::InvalidParams(format!(
                "need n >= 2 and replicas >= 4, got n={}, replicas={}",
                self.n, self.replicas
            )));
        }
        Ok(())
    }

    fn reference_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[tag::REFERENCE])
    }

    fn sde_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[tag::SDE])
    }
}

/// `X_n · e_1` of each replica after `n` steps (or at snapshot times).
pub fn endpoint_batch(
    model: &StackModel,
    n: u64,
    snapshots: &[u64],
    seed: u64,
    replicas: u64,
    workers: usize,
) -> Result<Vec<ReplicaSummary>, LimitsError> {
    let cfg = WalkConfig::steps(model.dim(), n).with_snapshots(snapshots);
    Ok(walk::batch(model, &cfg, seed, replicas, workers)?)
}

fn delta_of(model: &StackModel) -> Result<f64, LimitsError> {
    Ok(env::delta_e1(model)?)
}

// ---------------------------------------------------------------------------
// Recurrent case

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrentReport {
    pub model: String,
    pub delta: f64,
    pub n: u64,
    /// `{X_n/√n}` against `{X_{δ,−δ}(1)}`.
    pub comparison: Comparison,
    pub mean_scaled: f64,
    pub mean_scaled_se: f64,
    pub max_residual: f64,
    pub residual_bound: f64,
}

/// Two-sample KS between `X_n/√n` and `X_{δ,−δ}(1)` for a model with `δ ∈ [0, 1)`.
pub fn recurrent_limit_check(model: &StackModel, cfg: &LimitsConfig) -> Result<RecurrentReport, LimitsError> {
    cfg.check()?;
    let delta = delta_of(model)?;
    if !(0.0..1.0).contains(&delta) || model.dim() != 1 {
        return Err(LimitsError::RegimeMismatch { regime: "recurrent".into(), delta });
    }
    let ends = endpoint_batch(model, cfg.n, &[], cfg.seed, cfg.replicas, cfg.workers)?;
    let root = (cfg.n as f64).sqrt();
    let erw: Vec<f64> = ends.iter().map(|e| e.x() as f64 / root).collect();
    let params = PerturbedBmParams::new(delta, -delta, 1.0, cfg.dt)?;
    let paths = perturbed_bm_batch(&params, &[1.0], cfg.sde_seed(), cfg.sde_replicas, cfg.workers)?;
    let sde: Vec<f64> = paths.iter().map(|p| p.x[0]).collect();
    let max_residual = paths.iter().map(|p| p.max_residual).fold(0.0, f64::max);
    let comparison = compare_samples("X_n/sqrt(n) vs X_{d,-d}(1)", &erw, &sde)?.seeds(cfg.seed, cfg.sde_seed());
    Ok(RecurrentReport {
        model: model.id(),
        delta,
        n: cfg.n,
        comparison,
        mean_scaled: stats::mean(&erw),
        mean_scaled_se: stats::std_error(&erw),
        max_residual,
        residual_bound: params.residual_bound(),
    })
}

// ---------------------------------------------------------------------------
// Critical case δ = 1

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalReport {
    pub model: String,
    pub delta: f64,
    pub horizons: Vec<u64>,
    /// Scaled `X_n/(√n log n)` against `|N(0,1)|`, one per horizon.
    pub comparisons: Vec<Comparison>,
    /// 5th percentile of the scaled statistic after the scale fit, per horizon.
    pub p05: Vec<f64>,
}

/// Scale-fit KS of `X_n/(√n log n)` against the law of `S(1) = |N(0,1)|` at
/// each horizon; all horizons come from the same walks.
pub fn critical_limit_check(
    model: &StackModel,
    horizons: &[u64],
    cfg: &LimitsConfig,
) -> Result<CriticalReport, LimitsError> {
    cfg.check()?;
    let delta = delta_of(model)?;
    if (delta - 1.0).abs() > DELTA_TOL || model.dim() != 1 {
        return Err(LimitsError::RegimeMismatch { regime: "critical".into(), delta });
    }
    let mut hs: Vec<u64> = horizons.to_vec();
    hs.sort_unstable();
    hs.dedup();
    let Some(&last) = hs.last() else {
        return Err(LimitsError::InvalidParams("no horizons".into()));
    };
    if hs[0] < 2 {
        return Err(LimitsError::InvalidParams("horizons must be at least 2".into()));
    }
    let ends = endpoint_batch(model, last, &hs, cfg.seed, cfg.replicas, cfg.workers)?;
    let mut comparisons = Vec::new();
    let mut p05 = Vec::new();
    for &h in &hs {
        let norm = (h as f64).sqrt() * (h as f64).ln();
        let ys: Vec<f64> = ends
            .iter()
            .map(|e| e.snapshot(h).map_or(e.x(), |s| s.position.coord(1)) as f64 / norm)
            .collect();
        let c = scale_fit_compare_cdf(
            &format!("X_n/(sqrt(n) log n), n={h} vs |N(0,1)|"),
            &ys,
            stats::half_normal_cdf,
            HALF_NORMAL_MEDIAN,
            half_normal_quartiles(),
        )?
        .seeds(cfg.seed, 0);
        let scale = c.fitted_scale.unwrap_or(1.0);
        p05.push(stats::quantile(&ys, 0.05) / scale);
        comparisons.push(c);
    }
    Ok(CriticalReport { model: model.id(), delta, horizons: hs, comparisons, p05 })
}

/// Reference identity `S(1) =d |N(0,1)|`: running maxima of simulated
/// Brownian paths against direct `|N(0,1)|` draws.
pub fn running_max_reference(cfg: &LimitsConfig) -> Result<Comparison, LimitsError> {
    let params = PerturbedBmParams::new(0.0, 0.0, 1.0, cfg.dt)?;
    let paths = perturbed_bm_batch(&params, &[1.0], cfg.sde_seed(), cfg.sde_replicas, cfg.workers)?;
    let maxima: Vec<f64> = paths.iter().map(|p| p.b_max[0]).collect();
    let mut r = rng::rng_from(cfg.reference_seed(), &[]);
    let reference: Vec<f64> = (0..cfg.sde_replicas)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            z.abs()
        })
        .collect();
    Ok(compare_samples("max B on [0,1] vs |N(0,1)|", &maxima, &reference)?.seeds(cfg.sde_seed(), cfg.reference_seed()))
}

// ---------------------------------------------------------------------------
// Transient case δ > 1

/// The five scaling regimes of the transient walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScalingRegime {
    /// δ ∈ (1, 2): no speed, `T_n ~ n^{2/δ}`.
    I,
    /// δ = 2: `X_n ~ n / log n`.
    II,
    /// δ ∈ (2, 4): positive speed, stable fluctuations of index δ/2.
    III,
    /// δ = 4: Gaussian with a `√(n log n)` scale.
    IV,
    /// δ > 4: Gaussian with a `√n` scale.
    V,
}

impl ScalingRegime {
    pub fn for_delta(delta: f64) -> Option<ScalingRegime> {
        let d = delta.abs();
        if d <= 1.0 || !d.is_finite() {
            None
        } else if (d - 2.0).abs() <= DELTA_TOL {
            Some(ScalingRegime::II)
        } else if (d - 4.0).abs() <= DELTA_TOL {
            Some(ScalingRegime::IV)
        } else if d < 2.0 {
            Some(ScalingRegime::I)
        } else if d < 4.0 {
            Some(ScalingRegime::III)
        } else {
            Some(ScalingRegime::V)
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScalingRegime::I => "i",
            ScalingRegime::II => "ii",
            ScalingRegime::III => "iii",
            ScalingRegime::IV => "iv",
            ScalingRegime::V => "v",
        }
    }
}

impl std::fmt::Display for ScalingRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})", self.label())
    }
}

/// Centering and normalization of `X_n` (giving `ξ_n(1)`) and `T_n`
/// (giving `η_n(1)`) for one regime. In regime (ii) both maps give the
/// in-probability ratios `X_n log n / n → c` and `T_n/(n log n) → 1/c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFamily {
    pub regime: ScalingRegime,
    pub delta: f64,
}

impl ScalingFamily {
    /// Fails with `RegimeMismatch` unless `regime` is the one selected by `delta`.
    pub fn new(regime: ScalingRegime, delta: f64) -> Result<ScalingFamily, LimitsError> {
        if ScalingRegime::for_delta(delta) != Some(regime) || delta < 0.0 {
            return Err(LimitsError::RegimeMismatch { regime: regime.to_string(), delta });
        }
        Ok(ScalingFamily { regime, delta })
    }

    pub fn needs_speed(&self) -> bool {
        matches!(self.regime, ScalingRegime::III | ScalingRegime::IV | ScalingRegime::V)
    }

    /// Index of the limiting stable law (2 for the Gaussian regimes).
    pub fn stable_index(&self) -> f64 {
        match self.regime {
            ScalingRegime::I | ScalingRegime::III => self.delta / 2.0,
            ScalingRegime::II => 1.0,
            ScalingRegime::IV | ScalingRegime::V => 2.0,
        }
    }

    fn speed(&self, v: Option<f64>) -> Result<f64, LimitsError> {
        match v {
            Some(v) if v > 0.0 && v.is_finite() => Ok(v),
            _ if !self.needs_speed() => Ok(f64::NAN),
            other => Err(LimitsError::SpeedUnavailable(format!("regime {} needs a positive speed, got {other:?}", self.regime))),
        }
    }

    /// `ξ_n(1)` from `X_n`.
    pub fn xi(&self, x: f64, n: u64, v: Option<f64>) -> Result<f64, LimitsError> {
        let nf = n as f64;
        let d = self.delta;
        let v = self.speed(v)?;
        Ok(match self.regime {
            ScalingRegime::I => x / nf.powf(d / 2.0),
            ScalingRegime::II => x * nf.ln() / nf,
            ScalingRegime::III => (x - v * nf) / (v.powf(1.0 + 2.0 / d) * nf.powf(2.0 / d)),
            ScalingRegime::IV => (x - v * nf) / (v.powf(1.5) * (nf * nf.ln()).sqrt()),
            ScalingRegime::V => (x - v * nf) / (v.powf(1.5) * nf.sqrt()),
        })
    }

    /// `η_n(1)` from `T_n`.
    pub fn eta(&self, t: f64, n: u64, v: Option<f64>) -> Result<f64, LimitsError> {
        let nf = n as f64;
        let d = self.delta;
        let v = self.speed(v)?;
        Ok(match self.regime {
            ScalingRegime::I => t / nf.powf(2.0 / d),
            ScalingRegime::II => t / (nf * nf.ln()),
            ScalingRegime::III => (t - nf / v) / nf.powf(2.0 / d),
            ScalingRegime::IV => (t - nf / v) / (nf * nf.ln()).sqrt(),
            ScalingRegime::V => (t - nf / v) / nf.sqrt(),
        })
    }
}

/// Where the speed used for centering comes from (regimes iii–v).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Centering {
    /// Regeneration-cycle estimate from separate path-recording walks.
    Regeneration,
    /// Mean of `X_n/n` over the scale-fit half of the sample; the test half
    /// stays untouched.
    FitHalf,
    /// Location fit on the scale-fit half: `v` is chosen so that the median
    /// and interquartile range of `X_n/n^{2/δ'}` match the reference law
    /// (`δ'` the stable index times 2). A shape-only diagnostic.
    FitHalfQuantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransientConfig {
    pub base: LimitsConfig,
    /// Replace `X_n` by `sup_{i ≤ n} X_i`.
    pub use_sup: bool,
    /// Regime (i): also compare `X_n/n^{δ/2}` (costs `replicas` walks of `n` steps).
    pub positions: bool,
    /// Hill tail fraction for regime (i).
    pub tail_fraction: f64,
    /// Path-recording walks used to estimate the speed when none is supplied.
    pub speed_replicas: u64,
    pub speed_horizon: u64,
    pub bootstrap_resamples: usize,
    /// Regime (ii): the smaller horizon of the ratio comparison.
    pub ratio_horizon: u64,
    pub centering: Centering,
}

impl TransientConfig {
    pub fn new(n: u64, replicas: u64, seed: u64) -> TransientConfig {
        TransientConfig {
            base: LimitsConfig::new(n, replicas, seed),
            use_sup: false,
            positions: false,
            tail_fraction: 0.05,
            speed_replicas: 200,
            speed_horizon: n,
            bootstrap_resamples: 1000,
            ratio_horizon: n / 10,
            centering: Centering::Regeneration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailSummary {
    pub index: f64,
    pub ci: (f64, f64),
    pub k: usize,
    pub tail_fraction: f64,
    /// The index the limit law predicts.
    pub expected: f64,
}

/// Regime (ii) ratio stabilization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSummary {
    pub horizons: (u64, u64),
    pub means: (f64, f64),
    pub medians: (f64, f64),
    /// `|mean_2 − mean_1| / |mean_1|`.
    pub relative_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransientReport {
    pub model: String,
    pub family: ScalingFamily,
    pub n: u64,
    pub replicas: u64,
    pub speed: Option<SpeedEstimate>,
    /// The speed actually used to center `X_n`.
    pub centering_speed: Option<f64>,
    pub comparisons: Vec<Comparison>,
    pub tail: Option<TailSummary>,
    pub ratio: Option<RatioSummary>,
}

/// Regeneration-based speed from `replicas` path-recording walks.
pub fn estimate_speed(
    model: &StackModel,
    horizon: u64,
    replicas: u64,
    seed: u64,
    workers: usize,
    resamples: usize,
) -> Result<SpeedEstimate, LimitsError> {
    let totals = regen::cycle_totals_batch(model, seed, horizon, replicas, workers, 20, &[])?;
    let totals: Vec<_> = totals.into_iter().map(|(t, _)| t).collect();
    let mut r = rng::rng_from(seed, &[tag::BOOTSTRAP]);
    Ok(regen::speed_from_totals(&totals, resamples, 0.95, &mut r)?)
}

fn converged_speed(speed: &SpeedEstimate) -> Result<f64, LimitsError> {
    if speed.degenerate || !(speed.ci.0 > 0.0) {
        return Err(LimitsError::SpeedUnavailable(format!(
            "v_hat = {} with CI ({}, {}) is not bounded away from 0",
            speed.v_hat, speed.ci.0, speed.ci.1
        )));
    }
    Ok(speed.v_hat)
}

/// `T_n` for `replicas` dual-process replicas (stream `(seed, DUAL, i)`).
pub fn dual_hitting_times(
    model: &StackModel,
    n: u64,
    seed: u64,
    replicas: u64,
    workers: usize,
) -> Result<Vec<u64>, LimitsError> {
    let dual = DualProcess::new(model)?;
    Ok(harness::run_indexed(replicas, workers, |i| {
        dual.hitting_time(n, &mut rng::rng_from(seed, &[tag::DUAL, i]))
    }))
}

fn stable_reference(alpha: f64, negate: bool, size: usize, seed: u64) -> Result<Vec<f64>, LimitsError> {
    let params = StableParams::new(alpha, 1.0)?;
    let mut r: WalkRng = rng::rng_from(seed, &[]);
    let sign = if negate { -1.0 } else { 1.0 };
    Ok((0..size).map(|_| sign * stats::sample_stable(&params, &mut r)).collect())
}

/// Regimes iii–v write `X_n ≈ v n + v^κ n^γ c (−Z)`; with `y = X_n / n^γ`
/// this is a location–scale family `a + s(−Z)` with `a = v n^{1−γ}`.
fn quantile_location_speed<F: Fn(&ReplicaSummary) -> f64>(
    ends: &[ReplicaSummary],
    x_of: &F,
    family: &ScalingFamily,
    n: u64,
    b: &LimitsConfig,
) -> Result<f64, LimitsError> {
    let nf = n as f64;
    let gamma = match family.regime {
        ScalingRegime::III => 2.0 / family.delta,
        _ => 0.5,
    };
    let y: Vec<f64> = ends.iter().step_by(2).map(|e| x_of(e) / nf.powf(gamma)).collect();
    if y.len() < 4 {
        return Err(StatsError::TooFewSamples { needed: 8, got: ends.len() }.into());
    }
    let reference = stable_reference(family.stable_index(), true, b.reference_size, b.reference_seed())?;
    let (qy, qr) = (stats::quartiles(&y), stats::quartiles(&reference));
    let s = (qy[2] - qy[0]) / (qr[2] - qr[0]);
    let a = qy[1] - s * qr[1];
    let v = a / nf.powf(1.0 - gamma);
    if !(v > 0.0) {
        return Err(LimitsError::SpeedUnavailable(format!("quantile-fitted speed {v}")));
    }
    Ok(v)
}

/// Fixed-time marginal check for a transient model in the given regime.
/// Walks are generated here; see [`transient_marginal_from`] to reuse a batch.
pub fn transient_marginal_check(
    model: &StackModel,
    regime: ScalingRegime,
    cfg: &TransientConfig,
    speed: Option<SpeedEstimate>,
) -> Result<TransientReport, LimitsError> {
    let b = &cfg.base;
    b.check()?;
    ScalingFamily::new(regime, delta_of(model)?)?;
    let ends = match regime {
        ScalingRegime::I if !cfg.positions => Vec::new(),
        ScalingRegime::II => endpoint_batch(model, b.n, &[cfg.ratio_horizon], b.seed, b.replicas, b.workers)?,
        _ => endpoint_batch(model, b.n, &[], b.seed, b.replicas, b.workers)?,
    };
    transient_marginal_from(model, regime, cfg, &ends, speed)
}

/// As [`transient_marginal_check`] over pre-computed endpoint records
/// (regime (ii) needs snapshots at `cfg.ratio_horizon`).
pub fn transient_marginal_from(
    model: &StackModel,
    regime: ScalingRegime,
    cfg: &TransientConfig,
    ends: &[ReplicaSummary],
    speed: Option<SpeedEstimate>,
) -> Result<TransientReport, LimitsError> {
    let b = &cfg.base;
    let family = ScalingFamily::new(regime, delta_of(model)?)?;
    let n = b.n;
    let x_of = |e: &ReplicaSummary| (if cfg.use_sup { e.sup } else { e.x() }) as f64;
    let mut report = TransientReport {
        model: model.id(),
        family,
        n,
        replicas: b.replicas,
        speed: None,
        centering_speed: None,
        comparisons: Vec::new(),
        tail: None,
        ratio: None,
    };
    match regime {
        ScalingRegime::I => {
            let alpha = family.stable_index();
            let times = dual_hitting_times(model, n, b.seed, b.replicas, b.workers)?;
            let eta: Vec<f64> = times
                .iter()
                .map(|&t| family.eta(t as f64, n, None))
                .collect::<Result<_, _>>()?;
            let mut r = rng::rng_from(b.seed, &[tag::MISC]);
            // T_n has parity n, so neighbouring values differ by 2 / n^{2/δ}.
            let jittered: Vec<f64> = stats::jitter(&times, &mut r)
                .iter()
                .map(|&t| family.eta(t, n, None))
                .collect::<Result<_, _>>()?;
            let tail = stats::tail_index(&jittered, cfg.tail_fraction)?;
            report.tail = Some(TailSummary {
                index: tail.index,
                ci: tail.ci,
                k: tail.k,
                tail_fraction: cfg.tail_fraction,
                expected: alpha,
            });
            let reference = stable_reference(alpha, false, b.reference_size, b.reference_seed())?;
            report.comparisons.push(
                scale_fit_compare("T_n/n^(2/d) vs Z_(d/2)", &eta, &reference)?.seeds(b.seed, b.reference_seed()),
            );
            if !ends.is_empty() {
                let xi: Vec<f64> = ends.iter().map(|e| family.xi(x_of(e), n, None)).collect::<Result<_, _>>()?;
                let inv: Vec<f64> = reference.iter().map(|z| z.powf(-alpha)).collect();
                report.comparisons.push(
                    scale_fit_compare("X_n/n^(d/2) vs Z_(d/2)^(-d/2)", &xi, &inv)?.seeds(b.seed, b.reference_seed()),
                );
            }
        }
        ScalingRegime::II => {
            let h1 = cfg.ratio_horizon;
            if h1 < 2 || h1 >= n {
                return Err(LimitsError::InvalidParams(format!("ratio horizon {h1} must lie in [2, {n})")));
            }
            let at = |h: u64| -> Result<Vec<f64>, LimitsError> {
                ends.iter()
                    .map(|e| {
                        let x = if h == n {
                            x_of(e)
                        } else {
                            let s = e.snapshot(h).ok_or(WalkError::MissingRecord("a snapshot"))?;
                            (if cfg.use_sup { s.sup } else { s.position.coord(1) }) as f64
                        };
                        family.xi(x, h, None)
                    })
                    .collect()
            };
            let (r1, r2) = (at(h1)?, at(n)?);
            let (m1, m2) = (stats::mean(&r1), stats::mean(&r2));
            report.ratio = Some(RatioSummary {
                horizons: (h1, n),
                means: (m1, m2),
                medians: (stats::median(&r1), stats::median(&r2)),
                relative_change: (m2 - m1).abs() / m1.abs(),
            });
        }
        ScalingRegime::III | ScalingRegime::IV | ScalingRegime::V => {
            let v = match cfg.centering {
                Centering::Regeneration => {
                    let est = match speed {
                        Some(s) => s,
                        None => estimate_speed(
                            model,
                            cfg.speed_horizon,
                            cfg.speed_replicas,
                            rng::derive_seed(b.seed, &[tag::CYCLE]),
                            b.workers,
                            cfg.bootstrap_resamples,
                        )?,
                    };
                    let v = converged_speed(&est)?;
                    report.speed = Some(est);
                    v
                }
                Centering::FitHalf | Centering::FitHalfQuantiles => {
                    report.speed = speed;
                    let fit: Vec<f64> = ends.iter().step_by(2).map(|e| x_of(e) / n as f64).collect();
                    let v = if fit.is_empty() { f64::NAN } else { stats::mean(&fit) };
                    if !(v > 0.0) {
                        return Err(LimitsError::SpeedUnavailable(format!("fit-half mean speed {v}")));
                    }
                    v
                }
            };
            let v = if cfg.centering == Centering::FitHalfQuantiles {
                quantile_location_speed(ends, &x_of, &family, n, b)?
            } else {
                v
            };
            report.centering_speed = Some(v);
            let xi: Vec<f64> = ends.iter().map(|e| family.xi(x_of(e), n, Some(v))).collect::<Result<_, _>>()?;
            let alpha = family.stable_index();
            let reference = stable_reference(alpha, true, b.reference_size, b.reference_seed())?;
            let what = if cfg.use_sup { "sup X" } else { "X_n" };
            report.comparisons.push(
                scale_fit_compare(&format!("centered {what} vs -Z_({alpha})"), &xi, &reference)?
                    .seeds(b.seed, b.reference_seed()),
            );
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// d ≥ 2

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultidimReport {
    pub model: String,
    pub dim: usize,
    pub n: u64,
    pub replicas: u64,
    /// Fraction of replicas with `X_n · e_1 > X_{n/2} · e_1 > 0`.
    pub directional_fraction: f64,
    /// Bootstrap CI of `v · e_1` from `X_n · e_1 / n`.
    pub speed: stats::BootstrapCi,
    /// Mean and standard error of `X_n · e_j`, `j ≥ 2`.
    pub transverse: Vec<(f64, f64)>,
    /// Per-coordinate normality of `(X_n − n v̂)/√n` after a variance fit.
    pub normality: Vec<Comparison>,
    /// Empirical covariance of `(X_n − n v̂)/√n`.
    pub covariance: Vec<Vec<f64>>,
}

pub fn multidim_checks(model: &StackModel, cfg: &LimitsConfig, resamples: usize) -> Result<MultidimReport, LimitsError> {
    cfg.check()?;
    let dim = model.dim();
    if dim < 2 {
        return Err(LimitsError::InvalidParams(format!("need d >= 2, got {dim}")));
    }
    let half = cfg.n / 2;
    let ends = endpoint_batch(model, cfg.n, &[half], cfg.seed, cfg.replicas, cfg.workers)?;
    let nf = cfg.n as f64;
    let directional = ends
        .iter()
        .filter(|e| {
            let mid = e.snapshot(half).map_or(0, |s| s.position.coord(1));
            e.x() > mid && mid > 0
        })
        .count();
    let coords: Vec<Vec<f64>> = (1..=dim)
        .map(|j| ends.iter().map(|e| e.position.coord(j) as f64).collect())
        .collect();
    let speeds: Vec<f64> = coords[0].iter().map(|x| x / nf).collect();
    let mut r = rng::rng_from(cfg.seed, &[tag::BOOTSTRAP]);
    let speed = stats::bootstrap_ci(&speeds, stats::mean, resamples, 0.95, &mut r)?;
    let transverse = coords[1..].iter().map(|c| (stats::mean(c), stats::std_error(c))).collect();
    let centered: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| {
            let m = stats::mean(c);
            c.iter().map(|x| (x - m) / nf.sqrt()).collect()
        })
        .collect();
    let mut normality = Vec::new();
    for (j, c) in centered.iter().enumerate() {
        let (fit, test) = split(c);
        let sd = stats::variance(&fit).sqrt();
        let scaled: Vec<f64> = test.iter().map(|x| x / sd).collect();
        let ks = stats::ks_one_sample(&scaled, stats::normal_cdf)?;
        let mut cmp = Comparison::new(&format!("coordinate {} vs N(0, s^2)", j + 1), &scaled, [-0.674_489_750_196_081_7, 0.0, 0.674_489_750_196_081_7], ks);
        cmp.fit_size = fit.len();
        cmp.fitted_scale = Some(sd);
        normality.push(cmp.seeds(cfg.seed, 0));
    }
    let m = ends.len() as f64;
    let covariance = (0..dim)
        .map(|a| {
            (0..dim)
                .map(|b| centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum::<f64>() / (m - 1.0))
                .collect()
        })
        .collect();
    Ok(MultidimReport {
        model: model.id(),
        dim,
        n: cfg.n,
        replicas: cfg.replicas,
        directional_fraction: directional as f64 / ends.len() as f64,
        speed,
        transverse,
        normality,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u64, replicas: u64) -> LimitsConfig {
        let mut c = LimitsConfig::new(n, replicas, 7);
        c.workers = 1;
        c
    }

    #[test]
    fn unperturbed_is_brownian() {
        let p = PerturbedBmParams::new(0.0, 0.0, 1.0, 1e-3).unwrap();
        let paths = perturbed_bm_batch(&p, &[1.0], 3, 4000, 1).unwrap();
        let x: Vec<f64> = paths.iter().map(|q| q.x[0]).collect();
        assert!(stats::ks_one_sample(&x, stats::normal_cdf).unwrap().p_value > 0.01);
        assert!(paths.iter().all(|q| (q.x[0] - q.b[0]).abs() < 1e-9));
    }

    #[test]
    fn residual_stays_small_near_half() {
        let p = PerturbedBmParams::new(0.49, 0.49, 1.0, 1e-4).unwrap();
        let mut r = rng::rng_from(1, &[]);
        for _ in 0..20 {
            let path = simulate_perturbed_bm(&p, &[0.5, 1.0], &mut r).unwrap();
            assert!(path.x.iter().all(|x| x.is_finite()));
            assert!(path.max_residual < p.residual_bound());
        }
    }

    #[test]
    fn mirror_symmetry() {
        let a = PerturbedBmParams::new(0.4, -0.3, 1.0, 1e-3).unwrap();
        let b = PerturbedBmParams::new(-0.3, 0.4, 1.0, 1e-3).unwrap();
        let xa: Vec<f64> = perturbed_bm_batch(&a, &[1.0], 11, 3000, 1).unwrap().iter().map(|q| q.x[0]).collect();
        let xb: Vec<f64> = perturbed_bm_batch(&b, &[1.0], 12, 3000, 1).unwrap().iter().map(|q| -q.x[0]).collect();
        assert!(stats::ks_two_sample(&xa, &xb).unwrap().p_value > 0.01);
    }

    #[test]
    fn positive_alpha_pushes_up() {
        // With α > 0 and β < 0 maxima are amplified and minima damped.
        let p = PerturbedBmParams::new(0.5, -0.5, 1.0, 1e-3).unwrap();
        let x: Vec<f64> = perturbed_bm_batch(&p, &[1.0], 5, 3000, 1).unwrap().iter().map(|q| q.x[0]).collect();
        assert!(stats::mean(&x) > 5.0 * stats::std_error(&x));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PerturbedBmParams::new(1.0, 0.0, 1.0, 1e-3).is_err());
        assert!(PerturbedBmParams::new(0.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn regime_selection() {
        assert_eq!(ScalingRegime::for_delta(1.5), Some(ScalingRegime::I));
        assert_eq!(ScalingRegime::for_delta(2.0), Some(ScalingRegime::II));
        assert_eq!(ScalingRegime::for_delta(3.0), Some(ScalingRegime::III));
        assert_eq!(ScalingRegime::for_delta(4.0), Some(ScalingRegime::IV));
        assert_eq!(ScalingRegime::for_delta(6.0), Some(ScalingRegime::V));
        assert_eq!(ScalingRegime::for_delta(1.0), None);
        assert!(matches!(
            ScalingFamily::new(ScalingRegime::III, 1.5),
            Err(LimitsError::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn regime_iii_guard_on_model() {
        let c = TransientConfig::new(100, 10, 1);
        let err = transient_marginal_check(&StackModel::omega(0.875, 2), ScalingRegime::III, &c, None);
        assert!(matches!(err, Err(LimitsError::RegimeMismatch { .. })));
    }

    #[test]
    fn centering_needs_speed() {
        let f = ScalingFamily::new(ScalingRegime::V, 6.0).unwrap();
        assert!(matches!(f.xi(10.0, 100, None), Err(LimitsError::SpeedUnavailable(_))));
        // ξ = (x − vn)/(v^{3/2} √n): x = 30, v = 0.25, n = 100 gives 5 / (0.125 · 10).
        assert!((f.xi(30.0, 100, Some(0.25)).unwrap() - 4.0).abs() < 1e-12);
        let g = ScalingFamily::new(ScalingRegime::I, 1.5).unwrap();
        assert!((g.eta(1e4, 1000, None).unwrap() - 1e4 / 1e2 / 1e2).abs() < 1e-9);
    }

    #[test]
    fn scale_fit_recovers_factor() {
        let mut r = rng::rng_from(9, &[]);
        let reference = stable_reference(1.5, true, 20_000, 4).unwrap();
        let params = StableParams::new(1.5, 1.0).unwrap();
        let sample: Vec<f64> = (0..20_000).map(|_| -3.0 * stats::sample_stable(&params, &mut r)).collect();
        let c = scale_fit_compare("t", &sample, &reference).unwrap();
        assert!((c.fitted_scale.unwrap() - 3.0).abs() < 0.15);
        assert!(c.p_value > 0.01);
        assert_eq!(c.fit_size + c.sample_size, 20_000);
    }

    #[test]
    fn placebo_recurrent_check() {
        let rep = recurrent_limit_check(&StackModel::placebo(1), &cfg(2000, 2000)).unwrap();
        assert!(rep.comparison.p_value > 0.01, "{rep:?}");
        assert!(rep.max_residual < rep.residual_bound);
    }

    #[test]
    fn recurrent_guard() {
        assert!(matches!(
            recurrent_limit_check(&StackModel::omega(0.8, 5), &cfg(100, 10)),
            Err(LimitsError::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn multidim_simple_walk_has_no_speed() {
        let model = StackModel::Bw { dim: 2, p: 0.5 };
        let rep = multidim_checks(&model, &cfg(2000, 400), 300).unwrap();
        assert!(rep.speed.lo < 0.0 && rep.speed.hi > 0.0);
        assert!((rep.covariance[0][0] - 0.5).abs() < 0.15);
    }

    #[test]
    fn ecdf_pairs_are_monotone() {
        let rows = ecdf_pairs(&[1.0, 2.0, 3.0], &[1.5, 2.5], 5).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.windows(2).all(|w| w[0][1] <= w[1][1] && w[0][2] <= w[1][2]));
        assert_eq!(rows[4][1], 1.0);
    }
}
