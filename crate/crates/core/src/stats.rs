//! Statistics: totally skewed stable variates, Hill tail estimation,
//! Kolmogorov–Smirnov tests, empirical CDFs and the bootstrap.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate tail: {0}")]
    DegenerateTail(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// A totally skewed stable law `Z_{α,b}` with
/// `log E e^{iuZ} = -b|u|^α (1 - i tan(πα/2) sign u)` for `α ≠ 1` and
/// `-b|u| (1 + (2i/π) log|u| sign u)` for `α = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    alpha: f64,
    b: f64,
}

impl StableParams {
    pub fn new(alpha: f64, b: f64) -> Result<StableParams, StatsError> {
        if !(alpha > 0.0 && alpha <= 2.0) || !(b > 0.0 && b.is_finite()) {
            return Err(StatsError::InvalidParams(format!("alpha={alpha} must be in (0,2], b={b} positive")));
        }
        Ok(StableParams { alpha, b })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Characteristic function at `u` as `(re, im)`.
    pub fn cf(&self, u: f64) -> (f64, f64) {
        if u == 0.0 {
            return (1.0, 0.0);
        }
        let a = self.alpha;
        let s = u.signum();
        let (re, im) = if a == 1.0 {
            (-self.b * u.abs(), -self.b * u.abs() * (2.0 / PI) * u.abs().ln() * s)
        } else {
            let m = self.b * u.abs().powf(a);
            (-m, m * (PI * a / 2.0).tan() * s)
        };
        let r = re.exp();
        (r * im.cos(), r * im.sin())
    }
}

/// One draw of `Z_{α,b}` (Chambers–Mallows–Stuck).
pub fn sample_stable<R: RngCore + ?Sized>(params: &StableParams, rng: &mut R) -> f64 {
    let StableParams { alpha, b } = *params;
    if alpha == 2.0 {
        let z: f64 = StandardNormal.sample(rng);
        return (2.0 * b).sqrt() * z;
    }
    // V uniform on (-π/2, π/2), W standard exponential.
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    let sigma = b.powf(1.0 / alpha);
    if alpha == 1.0 {
        let h = FRAC_PI_2 + v;
        let x = (2.0 / PI) * (h * v.tan() - (FRAC_PI_2 * w * v.cos() / h).ln());
        return sigma * x + (2.0 / PI) * sigma * sigma.ln();
    }
    let t = (PI * alpha / 2.0).tan();
    let shift = t.atan() / alpha;
    let scale = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
    let x = scale * (alpha * (v + shift)).sin() / v.cos().powf(1.0 / alpha)
        * ((v - alpha * (v + shift)).cos() / w).powf((1.0 - alpha) / alpha);
    sigma * x
}

pub fn sample_stable_n<R: RngCore + ?Sized>(params: &StableParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| sample_stable(params, rng)).collect()
}

/// Empirical characteristic function at `u` as `(re, im)`.
pub fn empirical_cf(samples: &[f64], u: f64) -> (f64, f64) {
    let n = samples.len() as f64;
    let (c, s) = samples
        .iter()
        .fold((0.0, 0.0), |(c, s), &x| (c + (u * x).cos(), s + (u * x).sin()));
    (c / n, s / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailEstimate {
    pub index: f64,
    pub ci: (f64, f64),
    /// Number of upper order statistics used.
    pub k: usize,
    /// Minus the least-squares slope of log(rank/N) against log(x) over the top `k`.
    pub loglog_slope: f64,
}

/// Minimum sample size accepted by [`tail_index`].
pub const TAIL_MIN_SAMPLES: usize = 10_000;

/// Hill estimator on the top `tail_fraction` order statistics.
///
/// Integer-valued data should be jittered first (see [`jitter`]).
pub fn tail_index(samples: &[f64], tail_fraction: f64) -> Result<TailEstimate, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if samples.len() < TAIL_MIN_SAMPLES {
        return Err(StatsError::TooFewSamples { needed: TAIL_MIN_SAMPLES, got: samples.len() });
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 0.2) {
        return Err(StatsError::InvalidParams(format!("tail_fraction {tail_fraction} outside (0, 0.2]")));
    }
    let n = samples.len();
    let k = ((tail_fraction * n as f64) as usize).max(2);
    let mut top: Vec<f64> = samples.to_vec();
    top.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
    top.truncate(k + 1);
    top.sort_unstable_by(|a, b| b.total_cmp(a));
    let threshold = top[k];
    if !(threshold > 0.0) {
        return Err(StatsError::DegenerateTail(format!("threshold order statistic {threshold} is not positive")));
    }
    if top.windows(2).any(|w| w[0] == w[1]) {
        return Err(StatsError::DegenerateTail("tied upper order statistics".into()));
    }
    let h = top[..k].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k as f64;
    let index = 1.0 / h;
    let half = 1.96 * index / (k as f64).sqrt();
    let pts: Vec<(f64, f64)> = top[..k]
        .iter()
        .enumerate()
        .map(|(i, x)| (x.ln(), ((i + 1) as f64 / n as f64).ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(TailEstimate { index, ci: (index - half, index + half), k, loglog_slope: -sxy / sxx })
}

/// `x + U(0,1)` for integer data, breaking ties before tail estimation.
pub fn jitter<R: RngCore + ?Sized>(samples: &[u64], rng: &mut R) -> Vec<f64> {
    samples.iter().map(|&x| x as f64 + rng.random::<f64>()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Set when a sample has fewer than 50 points: the asymptotic p-value is rough.
    pub approximate: bool,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let sq = ne.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov test (handles ties).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    Ok(KsResult { statistic: d, p_value: ks_p(d, ne), approximate: a.len().min(b.len()) < 50 })
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok(KsResult { statistic: d, p_value: ks_p(d, n), approximate: xs.len() < 50 })
}

/// Empirical distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `(x, F(x))` at each jump.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = (i + 1) as f64 / n,
                _ => out.push((x, (i + 1) as f64 / n)),
            }
        }
        out
    }

    pub fn quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.sorted, q)
    }
}

pub fn ecdf(samples: &[f64]) -> Result<Ecdf, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    Ok(Ecdf { sorted: sorted(samples) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    /// Standard deviation of the bootstrap replicates.
    pub se: f64,
}

/// Percentile bootstrap over resampled index sets; `stat` receives the
/// indices of one resample (with repetition).
pub fn bootstrap_indexed<F, R>(n: usize, mut stat: F, resamples: usize, level: f64, rng: &mut R) -> Result<BootstrapCi, StatsError>
where
    F: FnMut(&[usize]) -> f64,
    R: RngCore + ?Sized,
{
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(StatsError::InvalidParams(format!("level {level}, resamples {resamples}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let estimate = stat(&all);
    let mut idx = vec![0usize; n];
    let mut reps: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in idx.iter_mut() {
                *slot = rng.random_range(0..n);
            }
            stat(&idx)
        })
        .collect();
    reps.sort_unstable_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let m = mean(&reps);
    let se = (reps.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (reps.len().max(2) - 1) as f64).sqrt();
    Ok(BootstrapCi {
        estimate,
        lo: quantile_sorted(&reps, tail),
        hi: quantile_sorted(&reps, 1.0 - tail),
        se,
    })
}

/// Percentile bootstrap interval of `stat` over `samples`.
pub fn bootstrap_ci<F, R>(samples: &[f64], stat: F, resamples: usize, level: f64, rng: &mut R) -> Result<BootstrapCi, StatsError>
where
    F: Fn(&[f64]) -> f64,
    R: RngCore + ?Sized,
{
    let mut buf = Vec::with_capacity(samples.len());
    bootstrap_indexed(
        samples.len(),
        |idx| {
            buf.clear();
            buf.extend(idx.iter().map(|&i| samples[i]));
            stat(&buf)
        },
        resamples,
        level,
        rng,
    )
    .map(|ci| BootstrapCi { estimate: stat(samples), ..ci })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(xs), q)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn quartiles(xs: &[f64]) -> [f64; 3] {
    let s = sorted(xs);
    [quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.75)]
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// CDF of `|N(0,1)|`.
pub fn half_normal_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        2.0 * normal_cdf(x) - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn empirical_cf_matches_closed_form() {
        let mut rng = rng::rng_from(1, &[]);
        for alpha in [0.75, 1.0, 1.5, 2.0] {
            let p = StableParams::new(alpha, 1.0).unwrap();
            let xs = sample_stable_n(&p, 1_000_000, &mut rng);
            for u in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
                let (er, ei) = empirical_cf(&xs, u);
                let (tr, ti) = p.cf(u);
                let err = ((er - tr).powi(2) + (ei - ti).powi(2)).sqrt();
                assert!(err < 0.02, "alpha {alpha}, u {u}: {er}+{ei}i vs {tr}+{ti}i");
            }
        }
    }

    #[test]
    fn gaussian_case_is_standard_normal_at_half() {
        let p = StableParams::new(2.0, 0.5).unwrap();
        let xs = sample_stable_n(&p, 1_000_000, &mut rng::rng_from(2, &[]));
        let ks = ks_one_sample(&xs, normal_cdf).unwrap();
        assert!(ks.p_value > 0.01, "{ks:?}");
        let se = (2.0 / (xs.len() as f64 - 1.0)).sqrt();
        assert!((variance(&xs) - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn half_stable_is_positive() {
        let p = StableParams::new(0.5, 1.0).unwrap();
        let xs = sample_stable_n(&p, 1_000_000, &mut rng::rng_from(3, &[]));
        assert!(xs.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn scaling_relation() {
        let mut rng = rng::rng_from(4, &[]);
        for alpha in [0.75, 1.5] {
            let c: f64 = 2.5;
            let a: Vec<f64> = sample_stable_n(&StableParams::new(alpha, 1.0).unwrap(), 50_000, &mut rng)
                .into_iter()
                .map(|x| c * x)
                .collect();
            let b = sample_stable_n(&StableParams::new(alpha, c.powf(alpha)).unwrap(), 50_000, &mut rng);
            assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
        }
    }

    #[test]
    fn hill_recovers_pareto_index() {
        let mut rng = rng::rng_from(5, &[]);
        let xs: Vec<f64> = (0..100_000).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 3.0)).collect();
        let est = tail_index(&xs, 0.05).unwrap();
        assert!((est.index - 3.0).abs() < 0.1, "{est:?}");
        assert!(est.ci.0 < 3.0 && 3.0 < est.ci.1);
        assert!((est.loglog_slope - 3.0).abs() < 0.3);
        let scaled: Vec<f64> = xs.iter().map(|x| 7.3 * x).collect();
        let est2 = tail_index(&scaled, 0.05).unwrap();
        assert!((est.index - est2.index).abs() < 1e-9);
    }

    #[test]
    fn hill_rejects_bad_input() {
        assert_eq!(tail_index(&[], 0.05), Err(StatsError::EmptySample));
        assert!(matches!(tail_index(&[1.0; 10], 0.05), Err(StatsError::TooFewSamples { .. })));
        assert!(matches!(tail_index(&vec![1.0; 20_000], 0.05), Err(StatsError::DegenerateTail(_))));
        let xs: Vec<f64> = (0..20_000).map(|i| i as f64).collect();
        assert!(tail_index(&xs, 0.3).is_err());
    }

    #[test]
    fn ks_basics() {
        let xs = [0.3, 1.2, -0.5, 2.2];
        let r = ks_two_sample(&xs, &xs).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(r.approximate);
        let a: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..1000).map(|i| i as f64 + 500.0).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-12 && r.p_value < 1e-10);
        assert_eq!(ks_two_sample(&[], &a), Err(StatsError::EmptySample));
        // the Kolmogorov survival function at its 5% point
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn ecdf_basics() {
        let e = ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert!((e.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(3.0), 1.0);
        assert_eq!(ecdf(&[1.0, 1.0, 2.0]).unwrap().steps(), vec![(1.0, 2.0 / 3.0), (2.0, 1.0)]);
        assert!(ecdf(&[]).is_err());
    }

    #[test]
    fn bootstrap_mean_coverage() {
        let mut rng = rng::rng_from(6, &[]);
        let reps = 200;
        let mut covered = 0;
        for _ in 0..reps {
            let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let ci = bootstrap_ci(&xs, mean, 1000, 0.95, &mut rng).unwrap();
            covered += usize::from(ci.lo <= 0.0 && 0.0 <= ci.hi);
        }
        let rate = covered as f64 / reps as f64;
        assert!((0.9..=0.99).contains(&rate), "coverage {rate}");
    }

    #[test]
    fn quantiles() {
        let xs = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(median(&xs), 3.0);
        assert_eq!(quartiles(&xs), [2.0, 3.0, 4.0]);
        assert_eq!(quantile(&xs, 1.0), 5.0);
    }
}
