//! The excited random walk: on each visit the walker eats the next cookie of
//! the current site and steps according to it.
//!
//! Runs always keep a few cheap sufficient statistics (final position, running
//! extrema and first-hit times along `e_1`, range, maximal local time, the
//! consumed drift); full paths, per-level jump counts and local-time maps are
//! opt-in.

use rand::RngCore;
use thiserror::Error;

use crate::env::{Direction, Environment, Site, SiteMap, StackModel};
use crate::harness;
use crate::rng::{self, WalkRng};

/// Default hard cap on the number of steps of a single run.
pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("step cap of {cap} reached before the stop rule was met")]
    StepCapExceeded { cap: u64, partial: Box<Trajectory> },
    #[error("identity violated: {0}")]
    IdentityViolated(String),
    #[error("level {0} not reached in the recorded trajectory")]
    LevelNotReached(i64),
    #[error("trajectory lacks {0}")]
    MissingRecord(&'static str),
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopRule {
    /// Exactly `n` steps.
    Steps(u64),
    /// First time `X · e_axis == level` (`axis` is 1-based).
    HitLevel { level: i64, axis: usize },
    /// First return to the starting site, giving up after `max_steps`.
    FirstReturn { max_steps: u64 },
    /// First exit of `X · e_1` from the open interval `(lo, hi)`.
    ExitInterval { lo: i64, hi: i64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordFlags {
    pub path: bool,
    pub jump_counts: bool,
    pub local_times: bool,
    /// Times at which to snapshot position, extrema and range.
    pub snapshots: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    pub dim: usize,
    pub stop: StopRule,
    pub start: Option<Site>,
    pub record: RecordFlags,
    pub step_cap: u64,
}

impl WalkConfig {
    pub fn new(dim: usize, stop: StopRule) -> WalkConfig {
        WalkConfig { dim, stop, start: None, record: RecordFlags::default(), step_cap: DEFAULT_STEP_CAP }
    }

    pub fn steps(dim: usize, n: u64) -> WalkConfig {
        WalkConfig::new(dim, StopRule::Steps(n))
    }

    pub fn with_path(mut self) -> WalkConfig {
        self.record.path = true;
        self
    }

    pub fn with_jump_counts(mut self) -> WalkConfig {
        self.record.jump_counts = true;
        self
    }

    pub fn with_local_times(mut self) -> WalkConfig {
        self.record.local_times = true;
        self
    }

    pub fn with_snapshots(mut self, times: &[u64]) -> WalkConfig {
        self.record.snapshots = times.to_vec();
        self
    }

    pub fn with_start(mut self, start: Site) -> WalkConfig {
        self.start = Some(start);
        self
    }

    pub fn with_step_cap(mut self, cap: u64) -> WalkConfig {
        self.step_cap = cap;
        self
    }

    fn validate(&self, env: &Environment) -> Result<(), WalkError> {
        if self.dim != env.dim() {
            return Err(WalkError::Config(format!(
                "walk dimension {} differs from environment dimension {}",
                self.dim,
                env.dim()
            )));
        }
        if let Some(s) = &self.start {
            if s.dim() != self.dim {
                return Err(WalkError::Config("start site has the wrong dimension".into()));
            }
        }
        match self.stop {
            StopRule::Steps(0) => Err(WalkError::Config("steps must be positive".into())),
            StopRule::FirstReturn { max_steps: 0 } => {
                Err(WalkError::Config("max_steps must be positive".into()))
            }
            StopRule::HitLevel { axis, .. } if axis == 0 || axis > self.dim => {
                Err(WalkError::Config(format!("axis {axis} outside 1..={}", self.dim)))
            }
            StopRule::ExitInterval { lo, hi } => {
                let x0 = self.start.map_or(0, |s| s.coord(1));
                if lo < x0 && x0 < hi {
                    Ok(())
                } else {
                    Err(WalkError::Config(format!("start {x0} not inside ({lo}, {hi})")))
                }
            }
            _ => Ok(()),
        }
    }
}

/// Counters indexed by an integer level, growing on demand in both directions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelCounts {
    pos: Vec<u64>,
    neg: Vec<u64>,
}

impl LevelCounts {
    #[inline]
    fn bump(&mut self, k: i64) {
        let (v, i) = if k >= 0 { (&mut self.pos, k as usize) } else { (&mut self.neg, (-k - 1) as usize) };
        if i >= v.len() {
            v.resize((i + 1).max(v.len() * 2).max(64), 0);
        }
        v[i] += 1;
    }

    pub fn get(&self, k: i64) -> u64 {
        let hit = if k >= 0 { self.pos.get(k as usize) } else { self.neg.get((-k - 1) as usize) };
        hit.copied().unwrap_or(0)
    }

    /// Smallest and largest level with a non-zero count.
    pub fn support(&self) -> Option<(i64, i64)> {
        let lo = match self.neg.iter().rposition(|&c| c > 0) {
            Some(i) => -(i as i64) - 1,
            None => self.pos.iter().position(|&c| c > 0)? as i64,
        };
        let hi = match self.pos.iter().rposition(|&c| c > 0) {
            Some(i) => i as i64,
            None => -(self.neg.iter().position(|&c| c > 0)? as i64) - 1,
        };
        Some((lo, hi))
    }
}

/// Per-level jump counts of a one-dimensional trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JumpCounts {
    /// `up.get(k)`: jumps from `k` to `k + 1`.
    pub up: LevelCounts,
    /// `down.get(k)`: jumps from `k` to `k - 1`.
    pub down: LevelCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: u64,
    pub position: Site,
    pub sup: i64,
    pub inf: i64,
    pub range: u64,
}

/// The record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub env_seed: u64,
    pub start: Site,
    pub time: u64,
    pub position: Site,
    /// Flattened coordinates, `dim` per time step, if recorded.
    pub path: Option<Vec<i32>>,
    /// `hits_up[j]`: first time `X · e_1 = x0 + j`.
    pub hits_up: Vec<u64>,
    /// `hits_down[j]`: first time `X · e_1 = x0 - 1 - j`.
    pub hits_down: Vec<u64>,
    pub sup: i64,
    pub inf: i64,
    pub jumps: Option<JumpCounts>,
    /// Total e_1-drift of the consumed cookies (`D_n`); d = 1 only.
    pub drift: Option<f64>,
    /// Largest visit count of a single site over times `0..=time`.
    pub max_local_time: u32,
    /// Number of distinct sites visited.
    pub range: u64,
    pub first_return: Option<u64>,
    pub local_times: Option<SiteMap<u32>>,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    fn new(dim: usize, env_seed: u64, start: Site, record: &RecordFlags) -> Trajectory {
        let x0 = start.coord(1);
        Trajectory {
            dim,
            env_seed,
            start,
            time: 0,
            position: start,
            path: record.path.then(|| start.coords().iter().map(|&c| c as i32).collect()),
            hits_up: vec![0],
            hits_down: Vec::new(),
            sup: x0,
            inf: x0,
            jumps: (record.jump_counts && dim == 1).then(JumpCounts::default),
            drift: (dim == 1).then_some(0.0),
            max_local_time: 1,
            range: 1,
            first_return: None,
            local_times: None,
            snapshots: Vec::new(),
        }
    }

    /// First hitting time of `X · e_1 = level`.
    pub fn hitting_time(&self, level: i64) -> Option<u64> {
        let x0 = self.start.coord(1);
        if level >= x0 {
            self.hits_up.get((level - x0) as usize).copied()
        } else {
            self.hits_down.get((x0 - 1 - level) as usize).copied()
        }
    }

    /// Position at time `t` (requires a recorded path).
    pub fn position_at(&self, t: u64) -> Option<Site> {
        let path = self.path.as_ref()?;
        let d = self.dim;
        let row = path.get(t as usize * d..(t as usize + 1) * d)?;
        Some(Site::from_coords(&row.iter().map(|&c| c as i64).collect::<Vec<_>>()))
    }

    /// The recorded path of a one-dimensional walk.
    pub fn line_path(&self) -> Option<&[i32]> {
        (self.dim == 1).then_some(self.path.as_deref()?)
    }

    /// Visit count of `site` over times `0..=time`, if local times were recorded.
    pub fn local_time(&self, site: &Site) -> Option<u32> {
        self.local_times.as_ref().map(|m| m.get(site).copied().unwrap_or(0))
    }

    /// Total visit count over all sites (equals `time + 1`).
    pub fn total_local_time(&self) -> Option<u64> {
        self.local_times.as_ref().map(|m| m.values().map(|&v| v as u64).sum())
    }

    /// Jump counts `(up, down)` before `T_n`.
    pub fn jump_counts_until(&self, n: i64) -> Result<JumpCounts, WalkError> {
        let t_n = self.hitting_time(n).ok_or(WalkError::LevelNotReached(n))?;
        if t_n == self.time {
            if let Some(j) = &self.jumps {
                return Ok(j.clone());
            }
        }
        let path = self.line_path().ok_or(WalkError::MissingRecord("a one-dimensional path"))?;
        let mut counts = JumpCounts::default();
        for w in path[..=t_n as usize].windows(2) {
            if w[1] > w[0] {
                counts.up.bump(w[0] as i64);
            } else {
                counts.down.bump(w[0] as i64);
            }
        }
        Ok(counts)
    }
}

/// Outcome of [`jump_identities`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityReport {
    pub level: i64,
    pub hitting_time: u64,
    pub down_total: u64,
    pub levels_checked: usize,
}

/// One step from `position`: eats the next cookie there and moves.
pub fn step(position: &Site, env: &mut Environment, rng: &mut WalkRng) -> Site {
    let (stack, visit) = env.consume(position);
    let u = rng::unit_f64(rng.next_u64());
    let dir = env.tables().draw_direction(stack, visit, u);
    position.shifted(Direction::from_index(dir))
}

/// Runs the walk from the configured start until the stop rule fires.
///
/// The environment is used as-is; call [`Environment::reset`] between
/// independent replicas.
pub fn run(env: &mut Environment, config: &WalkConfig, rng: &mut WalkRng) -> Result<Trajectory, WalkError> {
    config.validate(env)?;
    let start = config.start.unwrap_or_else(|| Site::origin(config.dim));
    let mut traj = Trajectory::new(config.dim, env.seed(), start, &config.record);
    let mut snaps = config.record.snapshots.clone();
    snaps.sort_unstable();
    snaps.dedup();
    let finished = if config.dim == 1 {
        run_line(env, config, rng, &mut traj, &snaps)
    } else {
        run_lattice(env, config, rng, &mut traj, &snaps)
    };
    if config.record.local_times {
        traj.local_times = Some(local_times_from(env, &traj));
    }
    if finished {
        Ok(traj)
    } else {
        Err(WalkError::StepCapExceeded { cap: config.step_cap, partial: Box::new(traj) })
    }
}

fn local_times_from(env: &Environment, traj: &Trajectory) -> SiteMap<u32> {
    // Every departure consumed a cookie; add the visit in progress at the final site.
    let mut map: SiteMap<u32> = env.consumed_sites().collect();
    *map.entry(traj.position).or_insert(0) += 1;
    map
}

/// Step budget implied by the stop rule and cap.
fn time_limit(config: &WalkConfig) -> (u64, bool) {
    match config.stop {
        StopRule::Steps(n) if n <= config.step_cap => (n, true),
        StopRule::FirstReturn { max_steps } if max_steps <= config.step_cap => (max_steps, true),
        _ => (config.step_cap, false),
    }
}

fn run_line(
    env: &mut Environment,
    config: &WalkConfig,
    rng: &mut WalkRng,
    traj: &mut Trajectory,
    snaps: &[u64],
) -> bool {
    let x0 = traj.start.coord(1);
    let (limit, limit_is_stop) = time_limit(config);
    let (target_hi, target_lo) = match config.stop {
        StopRule::HitLevel { level, .. } if level >= x0 => (level, i64::MIN),
        StopRule::HitLevel { level, .. } => (i64::MAX, level),
        StopRule::ExitInterval { lo, hi } => (hi, lo),
        _ => (i64::MAX, i64::MIN),
    };
    if x0 >= target_hi || x0 <= target_lo {
        return true;
    }
    let watch_return = matches!(config.stop, StopRule::FirstReturn { .. });
    let mut x = x0;
    let mut t: u64 = 0;
    let mut sup = x0;
    let mut inf = x0;
    let mut drift = 0.0f64;
    let mut max_local: u32 = 0;
    let mut range: u64 = 0;
    let mut snap_iter = snaps.iter().copied().filter(|&s| s > 0).peekable();
    let mut next_event = snap_iter.peek().copied().unwrap_or(u64::MAX).min(limit);
    let mut path = traj.path.take();
    let mut jumps = traj.jumps.take();
    let tables = env.tables().clone();
    let finished;
    loop {
        if t == next_event {
            if snap_iter.peek() == Some(&t) {
                snap_iter.next();
                let unseen = u64::from(env.consumed_line(x) == 0);
                traj.snapshots.push(Snapshot { time: t, position: Site::line(x), sup, inf, range: range + unseen });
            }
            if t == limit {
                finished = limit_is_stop;
                break;
            }
            next_event = snap_iter.peek().copied().unwrap_or(u64::MAX).min(limit);
        }
        let (stack, visit) = env.consume_line(x);
        if visit == 1 {
            range += 1;
        }
        if visit > max_local {
            max_local = visit;
        }
        let p = tables.right_prob(stack, visit);
        drift += 2.0 * p - 1.0;
        let right = rng::unit_f64(rng.next_u64()) < p;
        if let Some(j) = jumps.as_mut() {
            if right {
                j.up.bump(x);
            } else {
                j.down.bump(x);
            }
        }
        x += if right { 1 } else { -1 };
        t += 1;
        if let Some(p) = path.as_mut() {
            p.push(x as i32);
        }
        if x > sup {
            sup = x;
            traj.hits_up.push(t);
            if x >= target_hi {
                finished = true;
                break;
            }
        } else if x < inf {
            inf = x;
            traj.hits_down.push(t);
            if x <= target_lo {
                finished = true;
                break;
            }
        }
        if watch_return && x == x0 {
            traj.first_return = Some(t);
            finished = true;
            break;
        }
    }
    let unseen = env.consumed_line(x) == 0;
    if unseen {
        range += 1;
    }
    traj.time = t;
    traj.position = Site::line(x);
    traj.sup = sup;
    traj.inf = inf;
    traj.drift = Some(drift);
    traj.max_local_time = max_local.max(env.consumed_line(x) + 1);
    traj.range = range;
    traj.path = path;
    traj.jumps = jumps;
    finished
}

fn run_lattice(
    env: &mut Environment,
    config: &WalkConfig,
    rng: &mut WalkRng,
    traj: &mut Trajectory,
    snaps: &[u64],
) -> bool {
    let start = traj.start;
    let (limit, limit_is_stop) = time_limit(config);
    let mut pos = start;
    let mut t: u64 = 0;
    let mut max_local: u32 = 0;
    let mut range: u64 = 0;
    let mut snap_iter = snaps.iter().copied().filter(|&s| s > 0).peekable();
    let tables = env.tables().clone();
    let finished;
    if let StopRule::HitLevel { level, axis } = config.stop {
        if start.coord(axis) == level {
            return true;
        }
    }
    loop {
        if snap_iter.peek() == Some(&t) {
            snap_iter.next();
            let unseen = u64::from(env.consumed(&pos) == 0);
            traj.snapshots.push(Snapshot {
                time: t,
                position: pos,
                sup: traj.sup,
                inf: traj.inf,
                range: range + unseen,
            });
        }
        if t == limit {
            finished = limit_is_stop;
            break;
        }
        let (stack, visit) = env.consume(&pos);
        if visit == 1 {
            range += 1;
        }
        max_local = max_local.max(visit);
        let u = rng::unit_f64(rng.next_u64());
        let dir = Direction::from_index(tables.draw_direction(stack, visit, u));
        pos = pos.shifted(dir);
        t += 1;
        if let Some(p) = traj.path.as_mut() {
            p.extend(pos.coords().iter().map(|&c| c as i32));
        }
        let x = pos.coord(1);
        if x > traj.sup {
            traj.sup = x;
            traj.hits_up.push(t);
        } else if x < traj.inf {
            traj.inf = x;
            traj.hits_down.push(t);
        }
        let stop = match config.stop {
            StopRule::HitLevel { level, axis } => pos.coord(axis) == level,
            StopRule::FirstReturn { .. } => {
                let back = pos == start;
                if back {
                    traj.first_return = Some(t);
                }
                back
            }
            StopRule::ExitInterval { lo, hi } => x <= lo || x >= hi,
            StopRule::Steps(_) => false,
        };
        if stop {
            finished = true;
            break;
        }
    }
    if env.consumed(&pos) == 0 {
        range += 1;
    }
    traj.time = t;
    traj.position = pos;
    traj.max_local_time = max_local.max(env.consumed(&pos) + 1);
    traj.range = range;
    finished
}

/// Checks `J↑_{n,k} = J↓_{n,k+1} + 1{0 ≤ k < n}` for every level and
/// `T_n = n + 2 Σ_{k ≤ n} J↓_{n,k}`, in integer arithmetic.
///
/// Levels are relative to the start, which must be the origin.
pub fn jump_identities(traj: &Trajectory, n: i64) -> Result<IdentityReport, WalkError> {
    if traj.dim != 1 || !traj.start.is_origin() {
        return Err(WalkError::Config("identities need a one-dimensional walk from 0".into()));
    }
    if n < 0 {
        return Err(WalkError::Config("level must be non-negative".into()));
    }
    let t_n = traj.hitting_time(n).ok_or(WalkError::LevelNotReached(n))?;
    let counts = traj.jump_counts_until(n)?;
    let (lo, hi) = match (counts.up.support(), counts.down.support()) {
        (Some(a), Some(b)) => (a.0.min(b.0 - 1), a.1.max(b.1 - 1)),
        (Some(a), None) => a,
        (None, Some(b)) => (b.0 - 1, b.1 - 1),
        (None, None) => (0, 0),
    };
    let mut checked = 0;
    for k in lo..=hi.max(n) {
        let rhs = counts.down.get(k + 1) + u64::from(0 <= k && k < n);
        if counts.up.get(k) != rhs {
            return Err(WalkError::IdentityViolated(format!(
                "J_up({n},{k}) = {} but J_down({n},{}) + 1{{0<=k<n}} = {rhs}",
                counts.up.get(k),
                k + 1
            )));
        }
        checked += 1;
    }
    let down_total: u64 = (lo..=n).map(|k| counts.down.get(k)).sum();
    if t_n != n as u64 + 2 * down_total {
        return Err(WalkError::IdentityViolated(format!(
            "T_{n} = {t_n} but n + 2 sum J_down = {}",
            n as u64 + 2 * down_total
        )));
    }
    Ok(IdentityReport { level: n, hitting_time: t_n, down_total, levels_checked: checked })
}

/// The series `M_m = X_m - D_m`, `m = 0..=n`, replaying the recorded path
/// against the environment realized from the trajectory's seed.
pub fn drift_martingale(traj: &Trajectory, env: &mut Environment) -> Result<Vec<f64>, WalkError> {
    let path = traj.line_path().ok_or(WalkError::MissingRecord("a one-dimensional path"))?;
    env.reset(traj.env_seed);
    let tables = env.tables().clone();
    let mut out = Vec::with_capacity(path.len());
    let mut drift = 0.0;
    out.push(path[0] as f64);
    for w in path.windows(2) {
        let (stack, visit) = env.consume_line(w[0] as i64);
        drift += 2.0 * tables.right_prob(stack, visit) - 1.0;
        out.push(w[1] as f64 - drift);
    }
    Ok(out)
}

/// `ξ*_n`: the largest number of visits to one site among times `0..=n`.
pub fn max_local_time(traj: &Trajectory, n: u64) -> Result<u32, WalkError> {
    if n > traj.time {
        return Err(WalkError::Config(format!("time {n} beyond trajectory end {}", traj.time)));
    }
    let Some(path) = traj.path.as_ref() else {
        return if n == traj.time { Ok(traj.max_local_time) } else { Err(WalkError::MissingRecord("a path")) };
    };
    let mut counts: SiteMap<u32> = SiteMap::default();
    let mut best = 0;
    for row in path.chunks(traj.dim).take(n as usize + 1) {
        let s = Site::from_coords(&row.iter().map(|&c| c as i64).collect::<Vec<_>>());
        let c = counts.entry(s).or_insert(0);
        *c += 1;
        best = best.max(*c);
    }
    Ok(best)
}

/// Compact per-replica record: what batch experiments keep of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSummary {
    pub index: u64,
    pub env_seed: u64,
    pub time: u64,
    pub position: Site,
    pub sup: i64,
    pub inf: i64,
    pub range: u64,
    pub max_local_time: u32,
    pub first_return: Option<u64>,
    pub snapshots: Vec<Snapshot>,
}

impl ReplicaSummary {
    pub fn from_trajectory(index: u64, traj: &Trajectory) -> ReplicaSummary {
        ReplicaSummary {
            index,
            env_seed: traj.env_seed,
            time: traj.time,
            position: traj.position,
            sup: traj.sup,
            inf: traj.inf,
            range: traj.range,
            max_local_time: traj.max_local_time,
            first_return: traj.first_return,
            snapshots: traj.snapshots.clone(),
        }
    }

    /// `X · e_1` at the end of the run.
    pub fn x(&self) -> i64 {
        self.position.coord(1)
    }

    pub fn snapshot(&self, time: u64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.time == time)
    }
}

/// Runs replica `i` of a batch in environment seed `replica_env_seed(seed, i)`
/// with walk stream `replica_rng(seed, i)` and maps the outcome through `f`.
/// Results are in replica order whatever the worker count.
pub fn batch_map<T, F>(
    model: &StackModel,
    config: &WalkConfig,
    seed: u64,
    replicas: u64,
    workers: usize,
    f: F,
) -> Vec<T>
where
    T: Send,
    F: Fn(u64, Result<Trajectory, WalkError>, &Environment) -> T + Sync,
{
    harness::run_indexed_with(
        replicas,
        workers,
        || Environment::new(model.clone(), 0).expect("validated model"),
        |env, i| {
            env.reset(rng::replica_env_seed(seed, i));
            let out = run(env, config, &mut rng::replica_rng(seed, i));
            f(i, out, env)
        },
    )
}

/// [`batch_map`] keeping only [`ReplicaSummary`] records.
pub fn batch(
    model: &StackModel,
    config: &WalkConfig,
    seed: u64,
    replicas: u64,
    workers: usize,
) -> Result<Vec<ReplicaSummary>, WalkError> {
    batch_map(model, config, seed, replicas, workers, |i, t, _| {
        t.map(|t| ReplicaSummary::from_trajectory(i, &t))
    })
    .into_iter()
    .collect()
}
