//! The dual branching process with migration.
//!
//! Each level `k` carries a sequence of Bernoulli trials whose `i`-th trial
//! succeeds with the right-probability of the `i`-th cookie at `k`. With
//! `F_m` the number of failures before the `m`-th success,
//! `V_0 = 0, V_{k+1} = F^{(k)}_{V_k + 1}`. Read backwards from level `n`, the
//! down-crossing counts of the walk have the law of `(V_0, ..., V_n)`.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, Poisson};
use thiserror::Error;

use crate::env::{ModelTables, Sign, Site, SiteStack, StackModel};
use crate::rng::WalkRng;
use crate::walk::{Trajectory, WalkError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchError {
    #[error("branching duality needs a one-dimensional model")]
    NotOneDimensional,
    #[error("branching duality needs i.i.d. stacks")]
    NotIid,
    #[error("trial sequences of this model may never reach the required successes")]
    UnboundedStacks,
}

/// Largest `r` handled by the bit-counting fair sampler; beyond it a
/// gamma-Poisson mixture is used.
const BIT_SAMPLER_MAX: u64 = 4096;

/// Failures before the `r`-th success of a fair coin (negative binomial).
pub fn fair_failures<R: RngCore + ?Sized>(r: u64, rng: &mut R) -> u64 {
    if r == 0 {
        return 0;
    }
    if r > BIT_SAMPLER_MAX {
        let lambda = Gamma::new(r as f64, 1.0).expect("valid gamma").sample(rng);
        return Poisson::new(lambda).expect("valid poisson").sample(rng) as u64;
    }
    // Each bit is one toss, 1 = success.
    let mut need = r;
    let mut fails = 0;
    loop {
        let w = rng.next_u64();
        let ones = w.count_ones() as u64;
        if ones < need {
            need -= ones;
            fails += 64 - ones;
            continue;
        }
        let mut x = w;
        for _ in 1..need {
            x &= x - 1;
        }
        let pos = x.trailing_zeros() as u64;
        return fails + pos + 1 - need;
    }
}

#[derive(Debug, Clone, Copy)]
enum Trials<'a> {
    Prefix(&'a [f64]),
    Run { len: u32, push: Sign },
}

/// The success/failure sequence of one level.
#[derive(Debug, Clone)]
pub struct TrialSequence<'a> {
    kind: Trials<'a>,
    next: u32,
}

impl<'a> TrialSequence<'a> {
    /// Trials with the given success probabilities, fair afterwards.
    pub fn new(right: &'a [f64]) -> TrialSequence<'a> {
        TrialSequence { kind: Trials::Prefix(right), next: 1 }
    }

    pub(crate) fn from_stack(tables: &'a ModelTables, stack: SiteStack) -> TrialSequence<'a> {
        let kind = match stack {
            SiteStack::Atom(a) => Trials::Prefix(tables.right_row(a)),
            SiteStack::Run { len, push } => Trials::Run { len, push },
            SiteStack::Trap(_) | SiteStack::Unrealized => {
                unreachable!("trap stacks are rejected before sampling")
            }
        };
        TrialSequence { kind, next: 1 }
    }

    /// Trials with index above this are fair.
    fn biased_len(&self) -> u32 {
        match self.kind {
            Trials::Prefix(p) => p.len() as u32,
            Trials::Run { len, .. } => len,
        }
    }

    fn prob(&self, i: u32) -> f64 {
        match self.kind {
            Trials::Prefix(p) => p.get(i as usize - 1).copied().unwrap_or(0.5),
            Trials::Run { len, push } => {
                let toward = if i < len { push } else { push.flip() };
                if i > len {
                    0.5
                } else if toward == Sign::Plus {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Success probability of the next trial.
    pub fn next_prob(&self) -> f64 {
        self.prob(self.next)
    }

    /// Draws the next trial; `true` is a success.
    pub fn trial<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> bool {
        let p = self.prob(self.next);
        self.next = self.next.saturating_add(1);
        rng.random::<f64>() < p
    }

    fn skip(&mut self, n: u32) {
        self.next = self.next.saturating_add(n);
    }
}

/// `F_m`: failures before the `m`-th success; consumes the sequence up to and
/// including that success.
pub fn failures_before_success<R: RngCore + ?Sized>(trials: &mut TrialSequence<'_>, m: u64, rng: &mut R) -> u64 {
    let mut successes = 0;
    let mut fails = 0;
    let biased = trials.biased_len();
    while successes < m && trials.next <= biased {
        if trials.trial(rng) {
            successes += 1;
        } else {
            fails += 1;
        }
    }
    if successes == m {
        return fails;
    }
    // Everything left is fair.
    trials.next = u32::MAX;
    fails + fair_failures(m - successes, rng)
}

/// One life cycle of `V`: `sigma = inf{j ≥ 1 : V_j = 0}` and `progeny = Σ_{j<σ} V_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LifeCycle {
    pub sigma: u64,
    pub progeny: u64,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    pub max_generations: u64,
    pub max_progeny: u64,
}

impl Default for Caps {
    fn default() -> Caps {
        Caps { max_generations: 10_000_000, max_progeny: 1_000_000_000 }
    }
}

/// The branching process of a model, with precomputed stack tables.
#[derive(Debug, Clone)]
pub struct DualProcess {
    model: StackModel,
    tables: ModelTables,
    deterministic: bool,
    /// `P[V_{k+1} = 0 | V_k = 0]` for deterministic stacks.
    stay_at_zero: f64,
}

impl DualProcess {
    pub fn new(model: &StackModel) -> Result<DualProcess, BranchError> {
        if model.dim() != 1 {
            return Err(BranchError::NotOneDimensional);
        }
        match model {
            StackModel::PerturbedExtrema { .. } => return Err(BranchError::NotIid),
            StackModel::Trapping { .. } => return Err(BranchError::UnboundedStacks),
            _ => {}
        }
        let tables = ModelTables::build(model);
        let deterministic = model.is_deterministic();
        let stay_at_zero = if deterministic { tables.right_prob(SiteStack::Atom(0), 1) } else { f64::NAN };
        Ok(DualProcess { model: model.clone(), tables, deterministic, stay_at_zero })
    }

    pub fn model(&self) -> &StackModel {
        &self.model
    }

    fn stack(&self, rng: &mut WalkRng) -> SiteStack {
        if self.deterministic {
            SiteStack::Atom(0)
        } else {
            self.model.sample_site(&Site::line(0), rng)
        }
    }

    /// A fresh level's trial sequence.
    pub fn trials(&self, rng: &mut WalkRng) -> TrialSequence<'_> {
        let stack = self.stack(rng);
        TrialSequence::from_stack(&self.tables, stack)
    }

    /// `F_m` on a fresh level.
    pub fn failures(&self, m: u64, rng: &mut WalkRng) -> u64 {
        let stack = self.stack(rng);
        let mut trials = TrialSequence::from_stack(&self.tables, stack);
        failures_before_success(&mut trials, m, rng)
    }

    /// One generation step with immigration: `V_{k+1} = F_{V_k + 1}`.
    #[inline]
    pub fn next_generation(&self, v: u64, rng: &mut WalkRng) -> u64 {
        self.failures(v + 1, rng)
    }

    /// Runs `V` from `V_0 = 0` until its first return to 0 or a cap.
    pub fn cycle(&self, rng: &mut WalkRng, caps: Caps, record_path: bool) -> (LifeCycle, Option<Vec<u64>>) {
        let mut path = record_path.then(|| vec![0u64]);
        let mut v = 0u64;
        let mut sigma = 0u64;
        let mut progeny = 0u64;
        loop {
            v = self.next_generation(v, rng);
            sigma += 1;
            if let Some(p) = path.as_mut() {
                p.push(v);
            }
            if v == 0 {
                return (LifeCycle { sigma, progeny, truncated: false }, path);
            }
            progeny += v;
            if sigma >= caps.max_generations || progeny >= caps.max_progeny {
                return (LifeCycle { sigma, progeny, truncated: true }, path);
            }
        }
    }

    /// `(V_0, ..., V_n)`.
    pub fn path(&self, n: u64, rng: &mut WalkRng) -> Vec<u64> {
        let mut out = Vec::with_capacity(n as usize + 1);
        let mut v = 0;
        out.push(v);
        for _ in 0..n {
            v = self.next_generation(v, rng);
            out.push(v);
        }
        out
    }

    /// A sample of the walk's hitting time `T_n` built from the dual process:
    /// `T_n = n + 2 (Σ_{j ≤ n} V_j + Σ_{i ≥ 1} W_i)`, where `W_0 = V_n` and
    /// `W_{i+1} = F_{W_i}` accounts for the time spent below 0.
    pub fn hitting_time(&self, n: u64, rng: &mut WalkRng) -> u64 {
        let mut total: u64 = 0;
        let mut v = 0u64;
        let mut k = 0u64;
        while k < n {
            if v == 0 && self.deterministic {
                // Jump over the run of generations that stay at 0.
                let stay = self.stay_at_zero;
                let zeros = if stay >= 1.0 {
                    u64::MAX
                } else if stay <= 0.0 {
                    0
                } else {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    (u.ln() / stay.ln()).floor().min(u64::MAX as f64) as u64
                };
                if zeros >= n - k {
                    break;
                }
                k += zeros;
                // The first trial failed; count the failures after it.
                let mut trials = TrialSequence::from_stack(&self.tables, SiteStack::Atom(0));
                trials.skip(1);
                v = 1 + failures_before_success(&mut trials, 1, rng);
            } else {
                v = self.next_generation(v, rng);
            }
            k += 1;
            total = total.saturating_add(v);
        }
        let mut w = v;
        while w > 0 {
            w = self.failures(w, rng);
            total = total.saturating_add(w);
        }
        n.saturating_add(total.saturating_mul(2))
    }

    /// `Σ_{m ≤ M} ζ_m − M + 1` for one fresh level, i.e. `F_M − M + 1`.
    pub fn offspring_excess(&self, m: u64, rng: &mut WalkRng) -> i64 {
        self.failures(m, rng) as i64 - m as i64 + 1
    }
}

/// One life cycle of the model's dual process.
pub fn run_cycle(
    model: &StackModel,
    rng: &mut WalkRng,
    caps: Caps,
    record_path: bool,
) -> Result<(LifeCycle, Option<Vec<u64>>), BranchError> {
    Ok(DualProcess::new(model)?.cycle(rng, caps, record_path))
}

/// `(J↓_{n,n}, ..., J↓_{n,0})` read off a trajectory that reached level `n`.
pub fn backward_process(traj: &Trajectory, n: i64) -> Result<Vec<u64>, WalkError> {
    let counts = traj.jump_counts_until(n)?;
    Ok((0..=n).rev().map(|k| counts.down.get(k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, RightLaw};
    use crate::rng;
    use crate::walk::{run, StopRule, WalkConfig};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn all_successes_give_no_failures() {
        let mut rng = rng::rng_from(1, &[]);
        let mut t = TrialSequence::new(&[1.0, 1.0, 1.0]);
        assert_eq!(failures_before_success(&mut t, 3, &mut rng), 0);
    }

    #[test]
    fn placebo_single_success_is_geometric() {
        let mut rng = rng::rng_from(2, &[]);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| failures_before_success(&mut TrialSequence::new(&[]), 1, &mut rng) as f64)
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m}");
    }

    #[test]
    fn two_phase_law_chi_square() {
        // P[F=0] = 0.8, P[F=j] = 0.2 * 2^-j for j ≥ 1.
        let mut rng = rng::rng_from(3, &[]);
        let n = 100_000;
        let bins = 10;
        let mut counts = vec![0f64; bins];
        for _ in 0..n {
            let f = failures_before_success(&mut TrialSequence::new(&[0.8]), 1, &mut rng) as usize;
            counts[f.min(bins - 1)] += 1.0;
        }
        let mut probs: Vec<f64> = (0..bins - 1)
            .map(|j| if j == 0 { 0.8 } else { 0.2 * 0.5f64.powi(j as i32) })
            .collect();
        probs.push(1.0 - probs.iter().sum::<f64>());
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(c, p)| (c - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(p_value > 0.001, "chi2 {chi2}, p {p_value}");
    }

    #[test]
    fn fair_sampler_moments() {
        // NB(r, 1/2): mean r, variance 2r, on both sampling paths.
        let mut rng = rng::rng_from(4, &[]);
        for r in [1u64, 3, 40, 63, 64, 65, 500, 10_000] {
            let xs: Vec<f64> = (0..20_000).map(|_| fair_failures(r, &mut rng) as f64).collect();
            let (m, se) = mean_se(&xs);
            assert!((m - r as f64).abs() < 4.0 * se, "r={r}: mean {m}");
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((var / (2.0 * r as f64) - 1.0).abs() < 0.1, "r={r}: var {var}");
        }
    }

    #[test]
    fn fair_sampler_matches_coin_tossing() {
        let mut rng = rng::rng_from(5, &[]);
        let n = 50_000;
        let r = 3;
        let mut fast = vec![0usize; 12];
        let mut slow = vec![0usize; 12];
        for _ in 0..n {
            fast[(fair_failures(r, &mut rng) as usize).min(11)] += 1;
            let (mut s, mut f) = (0, 0);
            while s < r {
                if rng.random::<bool>() {
                    s += 1
                } else {
                    f += 1
                }
            }
            slow[(f as usize).min(11)] += 1;
        }
        for (a, b) in fast.iter().zip(&slow) {
            let diff = (*a as f64 - *b as f64).abs();
            assert!(diff < 5.0 * ((a + b) as f64).sqrt() + 5.0, "{fast:?} vs {slow:?}");
        }
    }

    #[test]
    fn degenerate_right_cycle() {
        let model = StackModel::omega(1.0, 1);
        let (c, path) = run_cycle(&model, &mut rng::rng_from(0, &[]), Caps::default(), true).unwrap();
        assert_eq!(c, LifeCycle { sigma: 1, progeny: 0, truncated: false });
        assert_eq!(path.unwrap(), vec![0, 0]);
    }

    #[test]
    fn placebo_cycle_ends_immediately_half_the_time() {
        let dual = DualProcess::new(&StackModel::placebo(1)).unwrap();
        let mut rng = rng::rng_from(6, &[]);
        let caps = Caps { max_generations: 1000, max_progeny: 1_000_000 };
        let n = 100_000;
        let ones = (0..n).filter(|_| dual.cycle(&mut rng, caps, false).0.sigma == 1).count();
        let se = (0.25 / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn cycle_invariants() {
        let dual = DualProcess::new(&StackModel::omega(0.8, 5)).unwrap();
        let mut rng = rng::rng_from(7, &[]);
        for _ in 0..10_000 {
            let (c, path) = dual.cycle(&mut rng, Caps::default(), true);
            let path = path.unwrap();
            assert!(c.sigma >= 1 && c.progeny + 1 >= c.sigma && !c.truncated);
            assert_eq!(path.len() as u64, c.sigma + 1);
            assert_eq!(path.iter().sum::<u64>(), c.progeny);
            assert!(path[1..c.sigma as usize].iter().all(|&v| v > 0));
        }
    }

    #[test]
    fn truncation_flag() {
        let dual = DualProcess::new(&StackModel::placebo(1)).unwrap();
        let caps = Caps { max_generations: 3, max_progeny: u64::MAX };
        let mut rng = rng::rng_from(8, &[]);
        let truncated = (0..1000).filter(|_| dual.cycle(&mut rng, caps, false).0.truncated).count();
        assert!(truncated > 0);
    }

    #[test]
    fn mean_offspring_identity() {
        let mut rng = rng::rng_from(9, &[]);
        for (model, m, delta) in [
            (StackModel::omega(0.8, 5), 5, 3.0),
            (StackModel::omega(0.75, 1), 1, 0.5),
            (StackModel::HaveYourCookie { law: RightLaw::Fixed(0.5) }, 64, 0.0),
        ] {
            let dual = DualProcess::new(&model).unwrap();
            let xs: Vec<f64> = (0..100_000).map(|_| dual.offspring_excess(m, &mut rng) as f64).collect();
            let (mean, se) = mean_se(&xs);
            assert!((mean - (1.0 - delta)).abs() < 3.0 * se, "{}: {mean}", model.id());
        }
    }

    #[test]
    fn backward_vector_from_walk() {
        let model = StackModel::omega(0.8, 2);
        let mut env = Environment::new(model, 3).unwrap();
        let cfg = WalkConfig::new(1, StopRule::HitLevel { level: 3, axis: 1 }).with_jump_counts();
        let t = run(&mut env, &cfg, &mut rng::rng_from(3, &[])).unwrap();
        let b = backward_process(&t, 3).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0], 0);
        let below: u64 = (t.inf..0).map(|k| t.jumps.as_ref().unwrap().down.get(k)).sum();
        assert_eq!(t.time, 3 + 2 * (b.iter().sum::<u64>() + below));
    }

    #[test]
    fn rejects_unsupported_models() {
        assert_eq!(DualProcess::new(&StackModel::Bw { dim: 2, p: 0.7 }).unwrap_err(), BranchError::NotOneDimensional);
        assert_eq!(
            DualProcess::new(&StackModel::PerturbedExtrema { p: 0.5, q: 0.5 }).unwrap_err(),
            BranchError::NotIid
        );
        assert!(DualProcess::new(&StackModel::Trapping { eps: 0.1, mix: 0.5 }).is_err());
    }
}
