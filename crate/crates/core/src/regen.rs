//! Regeneration structure of transient walks.
//!
//! A time `n ≥ 1` is a regeneration time in direction `ℓ` if the walk was
//! strictly below `X_n · ℓ` before `n` and never goes below it afterwards.
//! On a finite record the future condition can only be checked up to the
//! horizon, so candidates in the final `W` steps are discarded.

use serde::Serialize;
use thiserror::Error;

use crate::env::{Environment, StackModel};
use crate::harness;
use crate::rng::{self, WalkRng};
use crate::stats::{self, StatsError};
use crate::walk::{self, ReplicaSummary, Trajectory, WalkConfig, WalkError};

/// Tolerance for level comparisons along non-coordinate directions.
pub const LEVEL_EPS: f64 = 1e-9;

/// Minimum number of i.i.d. cycles for [`speed_estimate`].
pub const MIN_CYCLES: usize = 100;

#[derive(Debug, Error)]
pub enum RegenError {
    #[error("need at least {needed} cycles, got {got}")]
    TooFewCycles { needed: usize, got: usize },
    #[error("parity violated: duration {duration}, displacement {displacement}")]
    ParityViolated { duration: u64, displacement: i64 },
    #[error("trajectory has no recorded path")]
    MissingPath,
    #[error("expected a one-dimensional trajectory")]
    NotOneDimensional,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Walk(#[from] WalkError),
}

/// One regeneration increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegenCycle {
    /// `i` for the increment `τ_i → τ_{i+1}`; 0 is the initial segment `0 → τ_1`.
    pub index: usize,
    pub duration: u64,
    pub displacement: f64,
}

fn projections(traj: &Trajectory, ell: &[f64]) -> Result<Vec<f64>, RegenError> {
    let path = traj.path.as_ref().ok_or(RegenError::MissingPath)?;
    Ok(path
        .chunks(traj.dim)
        .map(|row| row.iter().zip(ell).map(|(&c, &l)| c as f64 * l).sum())
        .collect())
}

/// Regeneration times in `1..=horizon - burn_off` (default burn-off: a tenth of the horizon).
pub fn find_regenerations(traj: &Trajectory, ell: &[f64], burn_off: Option<u64>) -> Result<Vec<u64>, RegenError> {
    let proj = projections(traj, ell)?;
    let horizon = traj.time;
    let w = burn_off.unwrap_or(horizon / 10);
    let last = horizon.saturating_sub(w) as usize;
    let n = proj.len();
    let mut suffix_min = vec![0.0; n];
    let mut m = f64::INFINITY;
    for i in (0..n).rev() {
        m = m.min(proj[i]);
        suffix_min[i] = m;
    }
    let mut out = Vec::new();
    let mut prefix_max = proj[0];
    for t in 1..=last.min(n - 1) {
        let level = proj[t];
        if prefix_max < level - LEVEL_EPS && suffix_min[t] >= level - LEVEL_EPS {
            out.push(t as u64);
        }
        prefix_max = prefix_max.max(level);
    }
    Ok(out)
}

/// Brute-force check of the regeneration conditions at `tau` over the whole record.
pub fn is_regeneration(traj: &Trajectory, ell: &[f64], tau: u64) -> Result<bool, RegenError> {
    let proj = projections(traj, ell)?;
    let t = tau as usize;
    let level = proj[t];
    Ok(t >= 1
        && proj[..t].iter().all(|&p| p < level - LEVEL_EPS)
        && proj[t..].iter().all(|&p| p >= level - LEVEL_EPS))
}

/// Splits a trajectory at its regeneration times: the initial segment
/// `0 → τ_1` and the i.i.d. increments `τ_i → τ_{i+1}`, `i ≥ 1`.
pub fn cycles(traj: &Trajectory, ell: &[f64], taus: &[u64]) -> Result<(Option<RegenCycle>, Vec<RegenCycle>), RegenError> {
    let proj = projections(traj, ell)?;
    let Some(&first) = taus.first() else {
        return Ok((None, Vec::new()));
    };
    let initial = RegenCycle { index: 0, duration: first, displacement: proj[first as usize] - proj[0] };
    let rest = taus
        .windows(2)
        .enumerate()
        .map(|(i, w)| RegenCycle {
            index: i + 1,
            duration: w[1] - w[0],
            displacement: proj[w[1] as usize] - proj[w[0] as usize],
        })
        .collect();
    Ok((Some(initial), rest))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedEstimate {
    pub v_hat: f64,
    pub ci: (f64, f64),
    /// Bootstrap standard error of `v_hat`.
    pub se: f64,
    pub cycles: usize,
    /// Hill index of cycle durations, when enough cycles are available.
    pub duration_tail_index: Option<f64>,
    /// Durations look heavy-tailed with infinite mean; the lower CI end is pinned to 0.
    pub degenerate: bool,
}

/// `v̂ = Σ displacement / Σ duration` over i.i.d. cycles (index ≥ 1), with a
/// percentile bootstrap interval.
pub fn speed_estimate(
    cycles: &[RegenCycle],
    resamples: usize,
    level: f64,
    rng: &mut WalkRng,
) -> Result<SpeedEstimate, RegenError> {
    let iid: Vec<&RegenCycle> = cycles.iter().filter(|c| c.index >= 1).collect();
    if iid.len() < MIN_CYCLES {
        return Err(RegenError::TooFewCycles { needed: MIN_CYCLES, got: iid.len() });
    }
    let disp: Vec<f64> = iid.iter().map(|c| c.displacement).collect();
    let dur: Vec<f64> = iid.iter().map(|c| c.duration as f64).collect();
    let ratio = |idx: &[usize]| {
        let (mut a, mut b) = (0.0, 0.0);
        for &i in idx {
            a += disp[i];
            b += dur[i];
        }
        a / b
    };
    let ci = stats::bootstrap_indexed(iid.len(), ratio, resamples, level, rng)?;
    let duration_tail_index = if iid.len() >= stats::TAIL_MIN_SAMPLES {
        let durations: Vec<u64> = iid.iter().map(|c| c.duration).collect();
        stats::tail_index(&stats::jitter(&durations, rng), 0.05).ok().map(|t| t.index)
    } else {
        None
    };
    let degenerate = duration_tail_index.is_some_and(|a| a < 1.0);
    let lo = if degenerate { ci.lo.min(0.0) } else { ci.lo };
    Ok(SpeedEstimate {
        v_hat: ci.estimate,
        ci: (lo, ci.hi),
        se: ci.se,
        cycles: iid.len(),
        duration_tail_index,
        degenerate,
    })
}

/// Paired samples for the cycle/life-cycle correspondence, one per trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondence {
    /// `X_{τ2} − X_{τ1}`.
    pub displacement: Vec<u64>,
    /// `(τ2 − τ1 − (X_{τ2} − X_{τ1})) / 2`.
    pub half_excess: Vec<u64>,
    /// Trajectories with fewer than two regeneration times.
    pub skipped: usize,
}

/// Collects `X_{τ2} − X_{τ1}` and the half-excess of one-dimensional trajectories.
pub fn correspondence_samples(trajs: &[Trajectory], burn_off: Option<u64>) -> Result<Correspondence, RegenError> {
    let mut out = Correspondence::default();
    for t in trajs {
        if t.dim != 1 {
            return Err(RegenError::NotOneDimensional);
        }
        let taus = find_regenerations(t, &[1.0], burn_off)?;
        if taus.len() < 2 {
            out.skipped += 1;
            continue;
        }
        let path = t.line_path().ok_or(RegenError::MissingPath)?;
        let duration = taus[1] - taus[0];
        let displacement = (path[taus[1] as usize] - path[taus[0] as usize]) as i64;
        let (a, b) = correspondence_pair(duration, displacement)?;
        out.displacement.push(a);
        out.half_excess.push(b);
    }
    Ok(out)
}

/// Exact parity check: `(duration − displacement) / 2` must be a non-negative integer.
pub fn correspondence_pair(duration: u64, displacement: i64) -> Result<(u64, u64), RegenError> {
    let excess = duration as i64 - displacement;
    if displacement < 1 || excess < 0 || excess % 2 != 0 {
        return Err(RegenError::ParityViolated { duration, displacement });
    }
    Ok((displacement as u64, (excess / 2) as u64))
}

/// Fraction of regeneration times found on a horizon `h` record that are
/// refuted once the same walks are continued to `2h`.
pub fn contamination_rate(
    model: &StackModel,
    seed: u64,
    horizon: u64,
    replicas: u64,
    workers: usize,
) -> Result<f64, RegenError> {
    let counts = harness::run_indexed_with(
        replicas,
        workers,
        || Environment::new(model.clone(), 0).expect("validated model"),
        |env, i| -> Result<(usize, usize), RegenError> {
            env.reset(rng::replica_env_seed(seed, i));
            let cfg = WalkConfig::steps(model.dim(), 2 * horizon).with_path();
            let long = walk::run(env, &cfg, &mut rng::replica_rng(seed, i))?;
            let mut short = long.clone();
            short.time = horizon;
            short.path.as_mut().unwrap().truncate((horizon as usize + 1) * long.dim);
            let ell = axis_direction(model.dim());
            let found = find_regenerations(&short, &ell, None)?;
            let confirmed = find_regenerations(&long, &ell, Some(0))?;
            let refuted = found.iter().filter(|t| confirmed.binary_search(t).is_err()).count();
            Ok((refuted, found.len()))
        },
    );
    let (mut bad, mut total) = (0, 0);
    for c in counts {
        let (b, t) = c?;
        bad += b;
        total += t;
    }
    Ok(if total == 0 { 0.0 } else { bad as f64 / total as f64 })
}

/// `e_1` in dimension `dim`.
pub fn axis_direction(dim: usize) -> Vec<f64> {
    let mut ell = vec![0.0; dim];
    ell[0] = 1.0;
    ell
}

/// Runs `replicas` walks of `horizon` steps and pools their i.i.d. cycles.
pub fn collect_cycles(
    model: &StackModel,
    seed: u64,
    horizon: u64,
    replicas: u64,
    workers: usize,
) -> Result<Vec<RegenCycle>, RegenError> {
    let per = harness::run_indexed_with(
        replicas,
        workers,
        || Environment::new(model.clone(), 0).expect("validated model"),
        |env, i| -> Result<Vec<RegenCycle>, RegenError> {
            env.reset(rng::replica_env_seed(seed, i));
            let cfg = WalkConfig::steps(model.dim(), horizon).with_path();
            let t = walk::run(env, &cfg, &mut rng::replica_rng(seed, i))?;
            let ell = axis_direction(model.dim());
            let taus = find_regenerations(&t, &ell, None)?;
            Ok(cycles(&t, &ell, &taus)?.1)
        },
    );
    let mut all = Vec::new();
    for p in per {
        all.extend(p?);
    }
    Ok(all)
}

/// Per-replica cycle sums, for speed estimation over many long walks
/// without holding every cycle in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTotals {
    pub cycles: u64,
    pub duration: u64,
    pub displacement: f64,
    /// Durations of the first few i.i.d. cycles, kept for the tail check.
    pub sample_durations: Vec<u64>,
}

impl CycleTotals {
    pub fn from_cycles(cycles: &[RegenCycle], keep: usize) -> CycleTotals {
        let iid: Vec<&RegenCycle> = cycles.iter().filter(|c| c.index >= 1).collect();
        CycleTotals {
            cycles: iid.len() as u64,
            duration: iid.iter().map(|c| c.duration).sum(),
            displacement: iid.iter().map(|c| c.displacement).sum(),
            sample_durations: iid.iter().take(keep).map(|c| c.duration).collect(),
        }
    }
}

/// Ratio estimator `Σ displacement / Σ duration` pooled over replicas, with a
/// percentile bootstrap that resamples whole replicas.
pub fn speed_from_totals(
    totals: &[CycleTotals],
    resamples: usize,
    level: f64,
    rng: &mut WalkRng,
) -> Result<SpeedEstimate, RegenError> {
    let cycles: u64 = totals.iter().map(|t| t.cycles).sum();
    if cycles < MIN_CYCLES as u64 || totals.len() < 2 {
        return Err(RegenError::TooFewCycles { needed: MIN_CYCLES, got: cycles as usize });
    }
    let ratio = |idx: &[usize]| {
        let (mut a, mut b) = (0.0, 0.0);
        for &i in idx {
            a += totals[i].displacement;
            b += totals[i].duration as f64;
        }
        a / b
    };
    let ci = stats::bootstrap_indexed(totals.len(), ratio, resamples, level, rng)?;
    let durations: Vec<u64> = totals.iter().flat_map(|t| t.sample_durations.iter().copied()).collect();
    let duration_tail_index = (durations.len() >= stats::TAIL_MIN_SAMPLES)
        .then(|| stats::tail_index(&stats::jitter(&durations, rng), 0.05).ok().map(|t| t.index))
        .flatten();
    let degenerate = duration_tail_index.is_some_and(|a| a < 1.0);
    let lo = if degenerate { ci.lo.min(0.0) } else { ci.lo };
    Ok(SpeedEstimate {
        v_hat: ci.estimate,
        ci: (lo, ci.hi),
        se: ci.se,
        cycles: cycles as usize,
        duration_tail_index,
        degenerate,
    })
}

/// Runs path-recording walks of `horizon` steps; returns each replica's cycle
/// sums alongside its summary record.
pub fn cycle_totals_batch(
    model: &StackModel,
    seed: u64,
    horizon: u64,
    replicas: u64,
    workers: usize,
    keep: usize,
    snapshots: &[u64],
) -> Result<Vec<(CycleTotals, ReplicaSummary)>, RegenError> {
    let cfg = WalkConfig::steps(model.dim(), horizon).with_path().with_snapshots(snapshots);
    let ell = axis_direction(model.dim());
    walk::batch_map(model, &cfg, seed, replicas, workers, |i, t, _| {
        let t = t?;
        let taus = find_regenerations(&t, &ell, None)?;
        let (_, cyc) = cycles(&t, &ell, &taus)?;
        Ok((CycleTotals::from_cycles(&cyc, keep), ReplicaSummary::from_trajectory(i, &t)))
    })
    .into_iter()
    .collect()
}
