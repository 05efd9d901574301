//! Cookie environments: cookies, cookie stacks, the generative stack models,
//! lazily realized environments on Z^d, the drift parameter δ and the phase
//! classification it induces.
//!
//! Directions are enumerated as `+e_1, -e_1, +e_2, -e_2, ...`; a [`Cookie`]
//! stores its probabilities in that order. In d = 1 this means
//! `(right, left)`.

use std::collections::HashMap;
use std::fmt;
use std::hash::{BuildHasherDefault, Hash, Hasher};

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::rng::{self, WalkRng};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 8;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid cookie: {0}")]
    InvalidCookie(String),
    #[error("invalid stack model: {0}")]
    InvalidModel(String),
    #[error("drift series diverges without a uniform sign")]
    NonSummableDrift,
    #[error("model is not spatially stationary: {0}")]
    NotStationary(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    /// Probability of a step to the right for a cookie that pushes this way with certainty.
    #[inline]
    fn right_prob(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => 0.0,
        }
    }
}

/// A unit coordinate vector `sign * e_axis`, with `axis` in `1..=d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Direction {
    axis: usize,
    sign: Sign,
}

impl Direction {
    pub fn new(axis: usize, sign: Sign, dim: usize) -> Result<Self, EnvError> {
        if axis == 0 || axis > dim || dim > MAX_DIM {
            return Err(EnvError::InvalidModel(format!(
                "axis {axis} outside 1..={dim}"
            )));
        }
        Ok(Direction { axis, sign })
    }

    pub const RIGHT: Direction = Direction { axis: 1, sign: Sign::Plus };
    pub const LEFT: Direction = Direction { axis: 1, sign: Sign::Minus };

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    /// Position of this direction in the fixed enumeration.
    pub fn index(&self) -> usize {
        2 * (self.axis - 1) + usize::from(self.sign == Sign::Minus)
    }

    pub fn from_index(index: usize) -> Direction {
        Direction {
            axis: index / 2 + 1,
            sign: if index % 2 == 0 { Sign::Plus } else { Sign::Minus },
        }
    }

    /// All `2d` directions in enumeration order.
    pub fn all(dim: usize) -> impl Iterator<Item = Direction> {
        (0..2 * dim).map(Direction::from_index)
    }
}

/// A lattice site in Z^d (d ≤ [`MAX_DIM`]).
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Site {
    coords: [i32; MAX_DIM],
    dim: u8,
}

impl Site {
    pub fn origin(dim: usize) -> Site {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Site { coords: [0; MAX_DIM], dim: dim as u8 }
    }

    pub fn line(x: i64) -> Site {
        let mut s = Site::origin(1);
        s.coords[0] = x as i32;
        s
    }

    pub fn from_coords(coords: &[i64]) -> Site {
        let mut s = Site::origin(coords.len());
        for (c, &x) in s.coords.iter_mut().zip(coords) {
            *c = i32::try_from(x).expect("site coordinate out of i32 range");
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// Coordinate along `axis` (1-based).
    pub fn coord(&self, axis: usize) -> i64 {
        self.coords[axis - 1] as i64
    }

    pub fn coords(&self) -> Vec<i64> {
        self.coords[..self.dim()].iter().map(|&c| c as i64).collect()
    }

    fn seed_parts(&self) -> Vec<u64> {
        self.coords[..self.dim()].iter().map(|&c| c as i64 as u64).collect()
    }

    pub fn shifted(&self, dir: Direction) -> Site {
        let mut s = *self;
        s.coords[dir.axis - 1] += dir.sign.value() as i32;
        s
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    /// Dot product with a real direction vector.
    pub fn project(&self, ell: &[f64]) -> f64 {
        self.coords[..self.dim()]
            .iter()
            .zip(ell)
            .map(|(&c, &l)| c as f64 * l)
            .sum()
    }

    /// True if the two sites differ by exactly one unit coordinate step.
    pub fn is_neighbor(&self, other: &Site) -> bool {
        self.dim == other.dim
            && self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| (a - b).unsigned_abs())
                .sum::<u32>()
                == 1
    }

    fn mix(&self) -> u64 {
        self.coords[..self.dim()]
            .iter()
            .fold(self.dim as u64, |h, &c| {
                (h.rotate_left(23) ^ (c as u32 as u64)).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            })
    }
}

impl Hash for Site {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.mix());
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

/// Hasher for [`Site`] keys: the key already mixes its coordinates, this only finalizes.
#[derive(Default)]
pub struct SiteHasher(u64);

impl Hasher for SiteHasher {
    fn finish(&self) -> u64 {
        rng::splitmix64(self.0)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.0 ^= v;
    }
}

pub type SiteMap<V> = HashMap<Site, V, BuildHasherDefault<SiteHasher>>;

/// A probability vector over the `2d` unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Cookie {
    probs: Vec<f64>,
}

impl Cookie {
    pub fn new(probs: Vec<f64>) -> Result<Cookie, EnvError> {
        if probs.is_empty() || probs.len() % 2 != 0 || probs.len() > 2 * MAX_DIM {
            return Err(EnvError::InvalidCookie(format!(
                "expected 2d entries, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(EnvError::InvalidCookie(format!("negative or non-finite entry in {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(EnvError::InvalidCookie(format!("entries sum to {total}")));
        }
        Ok(Cookie { probs })
    }

    /// The uniform cookie `1/(2d)`.
    pub fn placebo(dim: usize) -> Cookie {
        Cookie { probs: vec![1.0 / (2 * dim) as f64; 2 * dim] }
    }

    /// One-dimensional cookie stepping right with probability `p`.
    pub fn right(p: f64) -> Cookie {
        assert!((0.0..=1.0).contains(&p), "right-probability {p} outside [0,1]");
        Cookie { probs: vec![p, 1.0 - p] }
    }

    pub fn dim(&self) -> usize {
        self.probs.len() / 2
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, dir: Direction) -> f64 {
        self.probs[dir.index()]
    }

    /// Expected displacement `sum_e omega(e) e`.
    pub fn drift(&self) -> Vec<f64> {
        self.probs.chunks(2).map(|pm| pm[0] - pm[1]).collect()
    }

    pub fn is_placebo(&self) -> bool {
        let u = 1.0 / self.probs.len() as f64;
        self.probs.iter().all(|&p| (p - u).abs() <= PROB_TOL)
    }

    fn cdf(&self) -> Box<[f64]> {
        let mut acc = 0.0;
        let mut out: Vec<f64> = self
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Guard against rounding leaving the last bucket short of 1.
        *out.last_mut().unwrap() = f64::INFINITY;
        out.into_boxed_slice()
    }
}

/// What a stack yields beyond its explicit prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailRule {
    /// Uniform cookies forever.
    Placebo,
    /// The last prefix cookie forever (placebo if the prefix is empty).
    RepeatLast,
    /// One-dimensional trap cookies: the i-th cookie steps toward `toward`
    /// with probability `1 - eps * 2^-i`.
    Trap { toward: Sign, eps: f64 },
}

/// A finite prefix of cookies followed by a tail rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CookieStack {
    dim: usize,
    prefix: Vec<Cookie>,
    tail: TailRule,
}

impl CookieStack {
    pub fn new(dim: usize, prefix: Vec<Cookie>, tail: TailRule) -> Result<CookieStack, EnvError> {
        if let Some(c) = prefix.iter().find(|c| c.dim() != dim) {
            return Err(EnvError::DimensionMismatch { expected: dim, got: c.dim() });
        }
        if matches!(tail, TailRule::Trap { .. }) && dim != 1 {
            return Err(EnvError::InvalidModel("trap tails are one-dimensional".into()));
        }
        Ok(CookieStack { dim, prefix, tail })
    }

    pub fn prefix(&self) -> &[Cookie] {
        &self.prefix
    }

    pub fn tail(&self) -> TailRule {
        self.tail
    }

    /// The cookie eaten on the `visit`-th visit (1-based).
    pub fn cookie(&self, visit: u32) -> Cookie {
        assert!(visit >= 1, "visit index is 1-based");
        let i = visit as usize;
        if i <= self.prefix.len() {
            return self.prefix[i - 1].clone();
        }
        match self.tail {
            TailRule::Placebo => Cookie::placebo(self.dim),
            TailRule::RepeatLast => self
                .prefix
                .last()
                .cloned()
                .unwrap_or_else(|| Cookie::placebo(self.dim)),
            TailRule::Trap { toward, eps } => {
                let p = trap_prob(eps, visit);
                Cookie::right(if toward == Sign::Plus { p } else { 1.0 - p })
            }
        }
    }

    /// Number of cookies not counting a trailing all-placebo run; `None` if infinite.
    pub fn effective_len(&self) -> Option<usize> {
        let trimmed = self
            .prefix
            .iter()
            .rposition(|c| !c.is_placebo())
            .map_or(0, |i| i + 1);
        match self.tail {
            TailRule::Placebo => Some(trimmed),
            TailRule::RepeatLast => match self.prefix.last() {
                Some(c) if !c.is_placebo() => None,
                _ => Some(trimmed),
            },
            TailRule::Trap { .. } => None,
        }
    }

    /// Total drift stored in the stack; infinite entries for non-summable tails.
    pub fn total_drift(&self) -> Vec<f64> {
        let mut drift = vec![0.0; self.dim];
        for c in &self.prefix {
            for (d, x) in drift.iter_mut().zip(c.drift()) {
                *d += x;
            }
        }
        match self.tail {
            TailRule::Placebo => {}
            TailRule::RepeatLast => {
                if let Some(last) = self.prefix.last() {
                    for (d, x) in drift.iter_mut().zip(last.drift()) {
                        if x != 0.0 {
                            *d = x.signum() * f64::INFINITY;
                        }
                    }
                }
            }
            TailRule::Trap { toward, .. } => drift[0] = toward.value() as f64 * f64::INFINITY,
        }
        drift
    }
}

#[inline]
fn trap_prob(eps: f64, visit: u32) -> f64 {
    1.0 - eps * (-(visit as f64)).exp2()
}

/// One atom of a bounded i.i.d. stack law: a weight and the right-probabilities
/// of its (at most `M`) leading cookies.
#[derive(Debug, Clone, PartialEq)]
pub struct StackAtom {
    pub weight: f64,
    pub right: Vec<f64>,
}

/// Law of the per-site right-probability in "have your cookie and eat it" environments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RightLaw {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl RightLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RightLaw::Fixed(q) => q,
            RightLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// `E[1/(1-q)]`, the mean length of a site's excitation run.
    fn mean_run(&self) -> f64 {
        match *self {
            RightLaw::Fixed(q) => 1.0 / (1.0 - q),
            RightLaw::Uniform { lo, hi } if hi > lo => ((1.0 - lo).ln() - (1.0 - hi).ln()) / (hi - lo),
            RightLaw::Uniform { lo, .. } => 1.0 / (1.0 - lo),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            RightLaw::Fixed(q) => (q, q),
            RightLaw::Uniform { lo, hi } => (lo, hi),
        }
    }
}

/// Generative law of the per-site cookie stacks.
#[derive(Debug, Clone, PartialEq)]
pub enum StackModel {
    /// First visit: `p/d` along `+e_1`, `(1-p)/d` along `-e_1`, uniform on the
    /// other axes; placebo afterwards.
    Bw { dim: usize, p: f64 },
    /// d = 1 i.i.d. stacks drawn from finitely many atoms of length ≤ `max_cookies`.
    BoundedIid { max_cookies: usize, atoms: Vec<StackAtom> },
    /// The same finite prefix at every site, placebo afterwards.
    HomogeneousDeterministic { dim: usize, prefix: Vec<Cookie> },
    /// Each site is, with probability `mix`, an eventual right-pusher
    /// (`omega(z,1,i) = 1 - eps 2^-i`) and otherwise the mirror image.
    Trapping { eps: f64, mix: f64 },
    /// Right with probability `q(z)` until the first left jump from `z`, then fair.
    HaveYourCookie { law: RightLaw },
    /// Walk perturbed at its extrema with parameters `p` (maxima) and `q` (minima).
    PerturbedExtrema { p: f64, q: f64 },
}

impl StackModel {
    /// The homogeneous stack `(p, ..., p)` of length `m` on Z.
    pub fn omega(p: f64, m: usize) -> StackModel {
        StackModel::HomogeneousDeterministic { dim: 1, prefix: vec![Cookie::right(p); m] }
    }

    /// Simple symmetric walk on Z^d.
    pub fn placebo(dim: usize) -> StackModel {
        StackModel::HomogeneousDeterministic { dim, prefix: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        match self {
            StackModel::Bw { dim, .. } | StackModel::HomogeneousDeterministic { dim, .. } => *dim,
            _ => 1,
        }
    }

    /// Short identifier safe for comma-separated records.
    pub fn id(&self) -> String {
        match self {
            StackModel::Bw { dim, p } => format!("bw_d{dim}_p{p}"),
            StackModel::BoundedIid { max_cookies, atoms } => {
                format!("iid_m{max_cookies}_k{}", atoms.len())
            }
            StackModel::HomogeneousDeterministic { dim, prefix } => {
                let uniform = prefix.windows(2).all(|w| w[0] == w[1]);
                match prefix.first() {
                    None => format!("placebo_d{dim}"),
                    Some(c) if *dim == 1 && uniform => format!("omega_p{}_m{}", c.probs[0], prefix.len()),
                    Some(_) => format!("homog_d{dim}_m{}", prefix.len()),
                }
            }
            StackModel::Trapping { eps, mix } => format!("trap_eps{eps}_mix{mix}"),
            StackModel::HaveYourCookie { law } => match law {
                RightLaw::Fixed(q) => format!("hyc_q{q}"),
                RightLaw::Uniform { lo, hi } => format!("hyc_u{lo}-{hi}"),
            },
            StackModel::PerturbedExtrema { p, q } => format!("pe_p{p}_q{q}"),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidModel(msg));
        match self {
            StackModel::Bw { dim, p } => {
                if !(1..=MAX_DIM).contains(dim) {
                    return bad(format!("dimension {dim} outside 1..={MAX_DIM}"));
                }
                if !(0.0..=1.0).contains(p) {
                    return bad(format!("BW parameter p={p} outside [0,1]"));
                }
            }
            StackModel::BoundedIid { max_cookies, atoms } => {
                if atoms.is_empty() {
                    return bad("bounded i.i.d. model needs at least one atom".into());
                }
                let total: f64 = atoms.iter().map(|a| a.weight).sum();
                if (total - 1.0).abs() > 1e-9 || atoms.iter().any(|a| !(a.weight >= 0.0)) {
                    return bad(format!("atom weights must be non-negative and sum to 1, got {total}"));
                }
                for a in atoms {
                    if a.right.len() > *max_cookies {
                        return bad(format!(
                            "atom has {} cookies, bound is {max_cookies}",
                            a.right.len()
                        ));
                    }
                    if a.right.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return bad(format!("right-probabilities {:?} outside [0,1]", a.right));
                    }
                }
            }
            StackModel::HomogeneousDeterministic { dim, prefix } => {
                if !(1..=MAX_DIM).contains(dim) {
                    return bad(format!("dimension {dim} outside 1..={MAX_DIM}"));
                }
                if let Some(c) = prefix.iter().find(|c| c.dim() != *dim) {
                    return Err(EnvError::DimensionMismatch { expected: *dim, got: c.dim() });
                }
            }
            StackModel::Trapping { eps, mix } => {
                if !(*eps > 0.0 && *eps < 0.5) {
                    return bad(format!("trap eps={eps} outside (0,1/2)"));
                }
                if !(*mix > 0.0 && *mix < 1.0) {
                    return bad(format!("trap mix={mix} outside (0,1)"));
                }
            }
            StackModel::HaveYourCookie { law } => {
                let (lo, hi) = law.bounds();
                if !(lo >= 0.5 && hi < 1.0 && lo <= hi) {
                    return bad(format!("right-probability law must live in [1/2,1), got [{lo},{hi}]"));
                }
            }
            StackModel::PerturbedExtrema { p, q } => {
                if !(*p > 0.0 && *p <= 1.0 && *q > 0.0 && *q <= 1.0) {
                    return bad(format!("perturbation parameters p={p}, q={q} must lie in (0,1]"));
                }
            }
        }
        Ok(())
    }

    /// Upper bound `M` on the number of non-placebo cookies per site, if one exists.
    pub fn max_cookies(&self) -> Option<usize> {
        match self {
            StackModel::Bw { .. } => Some(1),
            StackModel::BoundedIid { max_cookies, .. } => Some(*max_cookies),
            StackModel::HomogeneousDeterministic { prefix, .. } => Some(prefix.len()),
            _ => None,
        }
    }

    /// True when site stacks are i.i.d. across sites (branching duality applies).
    pub fn is_iid(&self) -> bool {
        !matches!(self, StackModel::PerturbedExtrema { .. })
    }

    /// Deterministic stacks need no randomness to realize.
    pub(crate) fn is_deterministic(&self) -> bool {
        matches!(self, StackModel::Bw { .. } | StackModel::HomogeneousDeterministic { .. })
    }

    /// Draws the compact stack of a site from its own randomness source.
    pub(crate) fn sample_site<R: RngCore + ?Sized>(&self, site: &Site, rng: &mut R) -> SiteStack {
        match self {
            StackModel::Bw { .. } | StackModel::HomogeneousDeterministic { .. } => SiteStack::Atom(0),
            StackModel::BoundedIid { atoms, .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let last = atoms.len() - 1;
                let idx = atoms
                    .iter()
                    .position(|a| {
                        acc += a.weight;
                        u < acc
                    })
                    .unwrap_or(last);
                SiteStack::Atom(idx as u32)
            }
            StackModel::Trapping { mix, .. } => {
                SiteStack::Trap(if rng.random::<f64>() < *mix { Sign::Plus } else { Sign::Minus })
            }
            StackModel::HaveYourCookie { law } => {
                let q = law.sample(rng);
                SiteStack::Run { len: geometric_len(1.0 - q, rng), push: Sign::Plus }
            }
            StackModel::PerturbedExtrema { p, q } => {
                let x = site.coord(1);
                if x > 0 {
                    SiteStack::Run { len: geometric_len(*p, rng), push: Sign::Minus }
                } else if x < 0 {
                    SiteStack::Run { len: geometric_len(*q, rng), push: Sign::Plus }
                } else {
                    SiteStack::Run { len: 0, push: Sign::Plus }
                }
            }
        }
    }
}

/// `P[L = k] = s (1-s)^(k-1)`, `k ≥ 1`.
fn geometric_len<R: RngCore + ?Sized>(success: f64, rng: &mut R) -> u32 {
    if success >= 1.0 {
        return 1;
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    let k = 1.0 + (u.ln() / (1.0 - success).ln()).floor();
    k.min(u32::MAX as f64) as u32
}

/// Compact per-site stack representation used by the simulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SiteStack {
    Unrealized,
    /// Index into the model's prefix table, placebo afterwards.
    Atom(u32),
    Trap(Sign),
    /// `len - 1` cookies pushing `push` with certainty, then one pushing the
    /// other way, then placebo. `len = 0` is an all-placebo stack.
    Run { len: u32, push: Sign },
}

/// Precomputed lookup tables for a model.
#[derive(Debug, Clone)]
pub(crate) struct ModelTables {
    dim: usize,
    /// Right-probabilities per atom (d = 1).
    right: Vec<Vec<f64>>,
    /// Cumulative direction tables per atom and cookie.
    cdf: Vec<Vec<Box<[f64]>>>,
    /// Prefix cookies per atom.
    cookies: Vec<Vec<Cookie>>,
    trap_eps: f64,
}

impl ModelTables {
    pub(crate) fn build(model: &StackModel) -> ModelTables {
        let dim = model.dim();
        let cookies: Vec<Vec<Cookie>> = match model {
            StackModel::Bw { dim, p } => {
                let mut probs = vec![1.0 / (2 * dim) as f64; 2 * dim];
                probs[0] = p / *dim as f64;
                probs[1] = (1.0 - p) / *dim as f64;
                vec![vec![Cookie { probs }]]
            }
            StackModel::HomogeneousDeterministic { prefix, .. } => vec![prefix.clone()],
            StackModel::BoundedIid { atoms, .. } => atoms
                .iter()
                .map(|a| a.right.iter().map(|&p| Cookie::right(p)).collect())
                .collect(),
            _ => Vec::new(),
        };
        let right = if dim == 1 {
            cookies.iter().map(|cs| cs.iter().map(|c| c.probs[0]).collect()).collect()
        } else {
            Vec::new()
        };
        let cdf = cookies.iter().map(|cs| cs.iter().map(Cookie::cdf).collect()).collect();
        let trap_eps = match model {
            StackModel::Trapping { eps, .. } => *eps,
            _ => 0.0,
        };
        ModelTables { dim, right, cdf, cookies, trap_eps }
    }

    pub(crate) fn right_row(&self, atom: u32) -> &[f64] {
        &self.right[atom as usize]
    }

    /// Right-probability of the `visit`-th cookie of a one-dimensional stack.
    #[inline]
    pub(crate) fn right_prob(&self, stack: SiteStack, visit: u32) -> f64 {
        match stack {
            SiteStack::Atom(a) => {
                let row = &self.right[a as usize];
                let i = visit as usize - 1;
                if i < row.len() {
                    row[i]
                } else {
                    0.5
                }
            }
            SiteStack::Trap(toward) => {
                let p = trap_prob(self.trap_eps, visit);
                if toward == Sign::Plus {
                    p
                } else {
                    1.0 - p
                }
            }
            SiteStack::Run { len, push } => {
                if visit < len {
                    push.right_prob()
                } else if visit == len {
                    push.flip().right_prob()
                } else {
                    0.5
                }
            }
            SiteStack::Unrealized => unreachable!("stack queried before realization"),
        }
    }

    /// Direction index drawn from the `visit`-th cookie given a uniform `u`.
    #[inline]
    pub(crate) fn draw_direction(&self, stack: SiteStack, visit: u32, u: f64) -> usize {
        if self.dim == 1 {
            return usize::from(u >= self.right_prob(stack, visit));
        }
        if let SiteStack::Atom(a) = stack {
            if let Some(cdf) = self.cdf[a as usize].get(visit as usize - 1) {
                return cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
            }
        }
        ((u * (2 * self.dim) as f64) as usize).min(2 * self.dim - 1)
    }

    pub(crate) fn materialize(&self, stack: SiteStack) -> CookieStack {
        let dim = self.dim;
        match stack {
            SiteStack::Atom(a) => CookieStack {
                dim,
                prefix: self.cookies[a as usize].clone(),
                tail: TailRule::Placebo,
            },
            SiteStack::Trap(toward) => CookieStack {
                dim,
                prefix: Vec::new(),
                tail: TailRule::Trap { toward, eps: self.trap_eps },
            },
            SiteStack::Run { len, push } => {
                let mut prefix = vec![Cookie::right(push.right_prob()); len.saturating_sub(1) as usize];
                if len > 0 {
                    prefix.push(Cookie::right(push.flip().right_prob()));
                }
                CookieStack { dim, prefix, tail: TailRule::Placebo }
            }
            SiteStack::Unrealized => unreachable!("stack queried before realization"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SiteState {
    consumed: u32,
    stack: SiteStack,
}

const FRESH: SiteState = SiteState { consumed: 0, stack: SiteStack::Unrealized };

#[derive(Debug, Clone, Default)]
struct LineTable {
    pos: Vec<SiteState>,
    neg: Vec<SiteState>,
}

impl LineTable {
    #[inline]
    fn slot(&mut self, x: i64) -> &mut SiteState {
        let (v, i) = if x >= 0 {
            (&mut self.pos, x as usize)
        } else {
            (&mut self.neg, (-x - 1) as usize)
        };
        if i >= v.len() {
            let grow = (i + 1).max(v.len() * 2).max(1024);
            v.resize(grow, FRESH);
        }
        &mut v[i]
    }

    fn peek(&self, x: i64) -> Option<&SiteState> {
        if x >= 0 {
            self.pos.get(x as usize)
        } else {
            self.neg.get((-x - 1) as usize)
        }
    }

    fn clear(&mut self) {
        self.pos.clear();
        self.neg.clear();
    }
}

const TILE_BITS: u32 = 5;
const TILE: i32 = 1 << TILE_BITS;

/// Sites of Z^d (d ≥ 2) in square tiles over the first two coordinates; walks
/// are local, so consecutive steps mostly hit the cached tile.
#[derive(Debug, Clone, Default)]
struct TiledTable {
    index: SiteMap<u32>,
    tiles: Vec<Box<[SiteState]>>,
    used: usize,
    last: Option<(Site, u32)>,
}

impl TiledTable {
    #[inline]
    fn split(site: &Site) -> (Site, usize) {
        let mut key = *site;
        key.coords[0] = site.coords[0] >> TILE_BITS;
        key.coords[1] = site.coords[1] >> TILE_BITS;
        let off = (site.coords[0] & (TILE - 1)) + TILE * (site.coords[1] & (TILE - 1));
        (key, off as usize)
    }

    fn join(key: &Site, off: usize) -> Site {
        let mut s = *key;
        s.coords[0] = (key.coords[0] << TILE_BITS) + (off as i32 & (TILE - 1));
        s.coords[1] = (key.coords[1] << TILE_BITS) + (off as i32 >> TILE_BITS);
        s
    }

    #[inline]
    fn slot(&mut self, site: &Site) -> &mut SiteState {
        let (key, off) = TiledTable::split(site);
        let tile = match self.last {
            Some((k, t)) if k == key => t,
            _ => {
                let t = match self.index.get(&key) {
                    Some(&t) => t,
                    None => {
                        let t = self.used;
                        if t < self.tiles.len() {
                            self.tiles[t].fill(FRESH);
                        } else {
                            self.tiles.push(vec![FRESH; (TILE * TILE) as usize].into_boxed_slice());
                        }
                        self.used += 1;
                        self.index.insert(key, t as u32);
                        t as u32
                    }
                };
                self.last = Some((key, t));
                t
            }
        };
        &mut self.tiles[tile as usize][off]
    }

    fn peek(&self, site: &Site) -> Option<&SiteState> {
        let (key, off) = TiledTable::split(site);
        self.index.get(&key).map(|&t| &self.tiles[t as usize][off])
    }

    fn clear(&mut self) {
        self.index.clear();
        self.used = 0;
        self.last = None;
    }

    fn iter(&self) -> impl Iterator<Item = (Site, &SiteState)> + '_ {
        self.index.iter().flat_map(move |(key, &t)| {
            self.tiles[t as usize].iter().enumerate().map(move |(off, s)| (TiledTable::join(key, off), s))
        })
    }
}

#[derive(Debug, Clone)]
enum SiteTable {
    Line(LineTable),
    Lattice(TiledTable),
}

/// A lazily realized cookie environment.
///
/// A site's stack is drawn on first query from a randomness stream derived
/// from `(seed, site)`, so realization does not depend on visit order.
#[derive(Debug, Clone)]
pub struct Environment {
    model: StackModel,
    tables: ModelTables,
    seed: u64,
    sites: SiteTable,
}

impl Environment {
    pub fn new(model: StackModel, seed: u64) -> Result<Environment, EnvError> {
        model.validate()?;
        let tables = ModelTables::build(&model);
        let sites = if model.dim() == 1 {
            SiteTable::Line(LineTable::default())
        } else {
            SiteTable::Lattice(TiledTable::default())
        };
        Ok(Environment { model, tables, seed, sites })
    }

    /// Forgets all realized sites and consumption, keeping allocations.
    pub fn reset(&mut self, seed: u64) {
        self.seed = seed;
        match &mut self.sites {
            SiteTable::Line(t) => t.clear(),
            SiteTable::Lattice(m) => m.clear(),
        }
    }

    pub fn model(&self) -> &StackModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn tables(&self) -> &ModelTables {
        &self.tables
    }

    fn realize(model: &StackModel, seed: u64, site: &Site) -> SiteStack {
        if model.is_deterministic() {
            return SiteStack::Atom(0);
        }
        let mut site_rng = rng::rng_from(seed, &site.seed_parts());
        model.sample_site(site, &mut site_rng)
    }

    fn state_mut(&mut self, site: &Site) -> &mut SiteState {
        let (model, seed) = (&self.model, self.seed);
        let state = match &mut self.sites {
            SiteTable::Line(t) => t.slot(site.coord(1)),
            SiteTable::Lattice(m) => m.slot(site),
        };
        if state.stack == SiteStack::Unrealized {
            state.stack = Environment::realize(model, seed, site);
        }
        state
    }

    /// Eats the next cookie at `site`; returns its stack and the 1-based cookie index.
    #[inline]
    pub(crate) fn consume(&mut self, site: &Site) -> (SiteStack, u32) {
        let state = self.state_mut(site);
        state.consumed += 1;
        (state.stack, state.consumed)
    }

    /// Fast path for d = 1.
    #[inline]
    pub(crate) fn consume_line(&mut self, x: i64) -> (SiteStack, u32) {
        let SiteTable::Line(table) = &mut self.sites else {
            unreachable!("line access on a lattice environment")
        };
        let state = table.slot(x);
        if state.stack == SiteStack::Unrealized {
            state.stack = Environment::realize(&self.model, self.seed, &Site::line(x));
        }
        state.consumed += 1;
        (state.stack, state.consumed)
    }

    /// Number of cookies eaten at `site` so far.
    pub fn consumed(&self, site: &Site) -> u32 {
        match &self.sites {
            SiteTable::Line(t) => t.peek(site.coord(1)).map_or(0, |s| s.consumed),
            SiteTable::Lattice(m) => m.peek(site).map_or(0, |s| s.consumed),
        }
    }

    #[inline]
    pub(crate) fn consumed_line(&self, x: i64) -> u32 {
        match &self.sites {
            SiteTable::Line(t) => t.peek(x).map_or(0, |s| s.consumed),
            SiteTable::Lattice(_) => unreachable!("line access on a lattice environment"),
        }
    }

    /// Sites with at least one consumed cookie, with their counts.
    pub fn consumed_sites(&self) -> Box<dyn Iterator<Item = (Site, u32)> + '_> {
        match &self.sites {
            SiteTable::Line(t) => Box::new(
                t.pos
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i as i64, s))
                    .chain(t.neg.iter().enumerate().map(|(i, s)| (-(i as i64) - 1, s)))
                    .filter(|(_, s)| s.consumed > 0)
                    .map(|(x, s)| (Site::line(x), s.consumed)),
            ),
            SiteTable::Lattice(m) => Box::new(
                m.iter().filter(|(_, s)| s.consumed > 0).map(|(k, s)| (k, s.consumed)),
            ),
        }
    }

    /// The full stack at `site`, realizing it if needed.
    pub fn stack_at(&mut self, site: &Site) -> CookieStack {
        let stack = self.state_mut(site).stack;
        self.tables.materialize(stack)
    }

    /// The `visit`-th cookie at `site` (1-based), independent of consumption.
    pub fn cookie_at(&mut self, site: &Site, visit: u32) -> Cookie {
        assert!(visit >= 1, "visit index is 1-based");
        assert_eq!(site.dim(), self.dim(), "site dimension differs from environment");
        let stack = self.state_mut(site).stack;
        match stack {
            SiteStack::Atom(a) => self.tables.cookies[a as usize]
                .get(visit as usize - 1)
                .cloned()
                .unwrap_or_else(|| Cookie::placebo(self.tables.dim)),
            other => Cookie::right(self.tables.right_prob(other, visit)),
        }
    }

    /// View of the environment left over after the walker ate one cookie per
    /// entry of `path`.
    pub fn leftover<'a>(&'a mut self, path: &[Site]) -> LeftoverView<'a> {
        let mut eaten = SiteMap::default();
        for s in path {
            *eaten.entry(*s).or_insert(0u32) += 1;
        }
        LeftoverView { env: self, eaten }
    }
}

/// `psi(omega, path)`: the environment with the first cookie removed at each visit.
pub struct LeftoverView<'a> {
    env: &'a mut Environment,
    eaten: SiteMap<u32>,
}

impl LeftoverView<'_> {
    pub fn cookie_at(&mut self, site: &Site, visit: u32) -> Cookie {
        let shift = self.eaten.get(site).copied().unwrap_or(0);
        self.env.cookie_at(site, visit + shift)
    }
}

/// Expected total drift `delta` of a model's stack, one entry per axis.
pub fn delta(model: &StackModel) -> Result<Vec<f64>, EnvError> {
    model.validate()?;
    match model {
        StackModel::Bw { dim, p } => {
            let mut v = vec![0.0; *dim];
            v[0] = (2.0 * p - 1.0) / *dim as f64;
            Ok(v)
        }
        StackModel::HomogeneousDeterministic { dim, prefix } => {
            let mut v = vec![0.0; *dim];
            for c in prefix {
                for (a, x) in v.iter_mut().zip(c.drift()) {
                    *a += x;
                }
            }
            Ok(v)
        }
        StackModel::BoundedIid { atoms, .. } => Ok(vec![atoms
            .iter()
            .map(|a| a.weight * a.right.iter().map(|p| 2.0 * p - 1.0).sum::<f64>())
            .sum()]),
        StackModel::HaveYourCookie { law } => Ok(vec![law.mean_run() - 2.0]),
        StackModel::Trapping { .. } => Err(EnvError::NonSummableDrift),
        StackModel::PerturbedExtrema { .. } => Err(EnvError::NotStationary(
            "stack law depends on the sign of the site".into(),
        )),
    }
}

/// `delta` along `e_1`.
pub fn delta_e1(model: &StackModel) -> Result<f64, EnvError> {
    delta(model).map(|v| v[0])
}

/// Monte Carlo estimate of `delta` from `samples` independently drawn stacks:
/// per-axis mean and standard error.
pub fn delta_monte_carlo(
    model: &StackModel,
    samples: usize,
    rng: &mut WalkRng,
) -> Result<(Vec<f64>, Vec<f64>), EnvError> {
    model.validate()?;
    if let StackModel::PerturbedExtrema { .. } = model {
        return Err(EnvError::NotStationary(
            "stack law depends on the sign of the site".into(),
        ));
    }
    let tables = ModelTables::build(model);
    let origin = Site::origin(model.dim());
    let dim = model.dim();
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for _ in 0..samples {
        let stack = tables.materialize(model.sample_site(&origin, rng));
        let drift = stack.total_drift();
        if drift.iter().any(|d| !d.is_finite()) {
            return Err(EnvError::NonSummableDrift);
        }
        for ((s, q), x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(drift) {
            *s += x;
            *q += x * x;
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / n - m * m).max(0.0) / (n - 1.0).max(1.0)).sqrt())
        .collect();
    Ok((mean, se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Recurrent,
    TransientRight,
    TransientLeft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedSign {
    Zero,
    Positive,
    Negative,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phase {
    pub regime: Regime,
    pub speed: SpeedSign,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let regime = match self.regime {
            Regime::Recurrent => "recurrent",
            Regime::TransientRight => "transient_right",
            Regime::TransientLeft => "transient_left",
        };
        let speed = match self.speed {
            SpeedSign::Zero => "zero",
            SpeedSign::Positive => "positive",
            SpeedSign::Negative => "negative",
            SpeedSign::Unknown => "unknown",
        };
        write!(f, "{regime}/{speed}")
    }
}

/// Phase of a one-dimensional walk with bounded i.i.d. weakly elliptic stacks.
///
/// For models outside that class (e.g. merely stationary ergodic stacks)
/// the answer is advisory only.
pub fn classify_phase(delta: f64) -> Phase {
    let (regime, speed) = if delta.is_nan() {
        (Regime::Recurrent, SpeedSign::Unknown)
    } else if delta.abs() <= 1.0 {
        (Regime::Recurrent, SpeedSign::Zero)
    } else if delta > 2.0 {
        (Regime::TransientRight, SpeedSign::Positive)
    } else if delta > 1.0 {
        (Regime::TransientRight, SpeedSign::Zero)
    } else if delta < -2.0 {
        (Regime::TransientLeft, SpeedSign::Negative)
    } else {
        (Regime::TransientLeft, SpeedSign::Zero)
    };
    Phase { regime, speed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn bw_first_and_second_cookie() {
        let mut env = Environment::new(StackModel::Bw { dim: 1, p: 0.75 }, 1).unwrap();
        let z = Site::line(17);
        assert!(approx(env.cookie_at(&z, 1).probs(), &[0.75, 0.25]));
        assert!(approx(env.cookie_at(&z, 2).probs(), &[0.5, 0.5]));
    }

    #[test]
    fn bw_two_dimensions() {
        let mut env = Environment::new(StackModel::Bw { dim: 2, p: 1.0 }, 1).unwrap();
        let c = env.cookie_at(&Site::origin(2), 1);
        assert!(approx(c.probs(), &[0.5, 0.0, 0.25, 0.25]));
    }

    #[test]
    fn homogeneous_placebo_tail() {
        let mut env = Environment::new(StackModel::omega(0.8, 5), 1).unwrap();
        let z = Site::line(-3);
        assert!(approx(env.cookie_at(&z, 5).probs(), &[0.8, 0.2]));
        assert!(approx(env.cookie_at(&z, 7).probs(), &[0.5, 0.5]));
        assert_eq!(env.stack_at(&z).effective_len(), Some(5));
    }

    #[test]
    fn repeated_queries_agree() {
        let model = StackModel::BoundedIid {
            max_cookies: 2,
            atoms: vec![
                StackAtom { weight: 0.3, right: vec![0.9, 0.9] },
                StackAtom { weight: 0.7, right: vec![0.2] },
            ],
        };
        let mut env = Environment::new(model.clone(), 99).unwrap();
        let first: Vec<Cookie> = (-20..20).map(|x| env.cookie_at(&Site::line(x), 1)).collect();
        let again: Vec<Cookie> = (-20..20).rev().map(|x| env.cookie_at(&Site::line(x), 1)).collect();
        assert!(first.iter().eq(again.iter().rev()));
        // a fresh environment queried in another order realizes the same stacks
        let mut other = Environment::new(model, 99).unwrap();
        let third: Vec<Cookie> = (-20..20).rev().map(|x| other.cookie_at(&Site::line(x), 1)).collect();
        assert_eq!(again, third);
    }

    #[test]
    fn reset_reproduces_realization() {
        let model = StackModel::Trapping { eps: 0.2, mix: 0.5 };
        let mut env = Environment::new(model, 5).unwrap();
        let before: Vec<_> = (0..50).map(|x| env.stack_at(&Site::line(x))).collect();
        env.reset(5);
        let after: Vec<_> = (0..50).rev().map(|x| env.stack_at(&Site::line(x))).collect();
        assert!(before.iter().eq(after.iter().rev()));
    }

    #[test]
    fn cookie_validation() {
        assert!(Cookie::new(vec![0.5, 0.5]).is_ok());
        assert!(Cookie::new(vec![0.6, 0.5]).is_err());
        assert!(Cookie::new(vec![1.2, -0.2]).is_err());
        assert!(Cookie::new(vec![1.0]).is_err());
        assert!(Cookie::new(vec![0.25; 4]).unwrap().is_placebo());
    }

    #[test]
    fn effective_len_trims_trailing_placebo() {
        let stack = CookieStack::new(
            1,
            vec![Cookie::right(0.9), Cookie::right(0.5), Cookie::right(0.5)],
            TailRule::Placebo,
        )
        .unwrap();
        assert_eq!(stack.effective_len(), Some(1));
        let rep = CookieStack::new(1, vec![Cookie::right(0.7)], TailRule::RepeatLast).unwrap();
        assert_eq!(rep.effective_len(), None);
        assert!(approx(rep.cookie(40).probs(), &[0.7, 0.3]));
    }

    #[test]
    fn trap_stacks_push_and_are_unbounded() {
        let mut env = Environment::new(StackModel::Trapping { eps: 0.25, mix: 0.5 }, 3).unwrap();
        let mut saw = [false; 2];
        for x in 0..64 {
            let stack = env.stack_at(&Site::line(x));
            assert_eq!(stack.effective_len(), None);
            let TailRule::Trap { toward, .. } = stack.tail() else { panic!("trap tail expected") };
            let c1 = stack.cookie(1).probs()[0];
            let c3 = stack.cookie(3).probs()[0];
            match toward {
                Sign::Plus => {
                    saw[0] = true;
                    assert!((c1 - (1.0 - 0.125)).abs() < 1e-15 && c3 > c1);
                }
                Sign::Minus => {
                    saw[1] = true;
                    assert!((c1 - 0.125).abs() < 1e-15 && c3 < c1);
                }
            }
        }
        assert!(saw[0] && saw[1]);
    }

    #[test]
    fn perturbed_extrema_stacks() {
        let mut env = Environment::new(StackModel::PerturbedExtrema { p: 0.4, q: 0.6 }, 8).unwrap();
        assert_eq!(env.stack_at(&Site::line(0)).effective_len(), Some(0));
        for x in 1..30 {
            let s = env.stack_at(&Site::line(x));
            let n = s.prefix().len();
            assert!(n >= 1);
            assert!(s.prefix()[..n - 1].iter().all(|c| c.probs()[0] == 0.0));
            assert_eq!(s.prefix()[n - 1].probs()[0], 1.0);
            let s = env.stack_at(&Site::line(-x));
            let n = s.prefix().len();
            assert!(s.prefix()[..n - 1].iter().all(|c| c.probs()[0] == 1.0));
            assert_eq!(s.prefix()[n - 1].probs()[0], 0.0);
        }
    }

    #[test]
    fn delta_closed_forms() {
        let d = delta_e1(&StackModel::omega(0.8, 5)).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
        assert!(approx(&delta(&StackModel::Bw { dim: 3, p: 0.75 }).unwrap(), &[0.5 / 3.0, 0.0, 0.0]));
        assert_eq!(delta(&StackModel::placebo(2)).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            delta(&StackModel::Trapping { eps: 0.1, mix: 0.5 }),
            Err(EnvError::NonSummableDrift)
        );
        let hyc = delta_e1(&StackModel::HaveYourCookie { law: RightLaw::Fixed(0.75) }).unwrap();
        assert!((hyc - 2.0).abs() < 1e-12);
    }

    #[test]
    fn delta_monte_carlo_matches_closed_form() {
        let models = [
            StackModel::BoundedIid {
                max_cookies: 3,
                atoms: vec![
                    StackAtom { weight: 0.5, right: vec![0.9, 0.9, 0.9] },
                    StackAtom { weight: 0.25, right: vec![0.1] },
                    StackAtom { weight: 0.25, right: vec![] },
                ],
            },
            StackModel::HaveYourCookie { law: RightLaw::Uniform { lo: 0.5, hi: 0.8 } },
            StackModel::omega(0.7, 4),
        ];
        let mut rng = rng::rng_from(11, &[]);
        for m in models {
            let exact = delta_e1(&m).unwrap();
            let (mean, se) = delta_monte_carlo(&m, 100_000, &mut rng).unwrap();
            let tol = 3.0 * se[0] + 1e-9;
            assert!((mean[0] - exact).abs() <= tol, "{}: mc {} vs {}", m.id(), mean[0], exact);
        }
    }

    #[test]
    fn bounded_iid_respects_bound() {
        let model = StackModel::BoundedIid {
            max_cookies: 2,
            atoms: vec![
                StackAtom { weight: 0.5, right: vec![0.9, 0.6] },
                StackAtom { weight: 0.5, right: vec![0.3] },
            ],
        };
        let mut env = Environment::new(model, 4).unwrap();
        for x in -100..100 {
            assert!(env.stack_at(&Site::line(x)).effective_len().unwrap() <= 2);
        }
        let too_long = StackModel::BoundedIid {
            max_cookies: 1,
            atoms: vec![StackAtom { weight: 1.0, right: vec![0.9, 0.6] }],
        };
        assert!(too_long.validate().is_err());
    }

    #[test]
    fn phase_boundaries() {
        let p = |d| classify_phase(d);
        assert_eq!(p(0.5), Phase { regime: Regime::Recurrent, speed: SpeedSign::Zero });
        assert_eq!(p(1.0), Phase { regime: Regime::Recurrent, speed: SpeedSign::Zero });
        assert_eq!(p(1.5), Phase { regime: Regime::TransientRight, speed: SpeedSign::Zero });
        assert_eq!(p(2.0), Phase { regime: Regime::TransientRight, speed: SpeedSign::Zero });
        assert_eq!(p(3.0), Phase { regime: Regime::TransientRight, speed: SpeedSign::Positive });
        assert_eq!(p(-1.5), Phase { regime: Regime::TransientLeft, speed: SpeedSign::Zero });
        assert_eq!(p(-3.0), Phase { regime: Regime::TransientLeft, speed: SpeedSign::Negative });
        assert_eq!(p(f64::INFINITY).speed, SpeedSign::Positive);
    }

    #[test]
    fn leftover_counts_visits() {
        let mut env = Environment::new(StackModel::omega(0.9, 1), 0).unwrap();
        {
            let mut view = env.leftover(&[]);
            assert!(approx(view.cookie_at(&Site::line(0), 1).probs(), &[0.9, 0.1]));
        }
        {
            let mut view = env.leftover(&[Site::line(0)]);
            assert!(approx(view.cookie_at(&Site::line(0), 1).probs(), &[0.5, 0.5]));
        }
        let mut env = Environment::new(StackModel::omega(0.9, 2), 0).unwrap();
        let path = [Site::line(0), Site::line(1), Site::line(0)];
        let mut view = env.leftover(&path);
        assert!(view.cookie_at(&Site::line(0), 1).is_placebo());
        assert!(approx(view.cookie_at(&Site::line(1), 1).probs(), &[0.9, 0.1]));
        // the underlying environment is untouched
        assert_eq!(env.consumed(&Site::line(0)), 0);
        assert!(approx(env.cookie_at(&Site::line(0), 1).probs(), &[0.9, 0.1]));
    }

    #[test]
    fn direction_enumeration() {
        let dirs: Vec<_> = Direction::all(2).collect();
        assert_eq!(dirs.len(), 4);
        for (i, d) in dirs.iter().enumerate() {
            assert_eq!(d.index(), i);
        }
        assert_eq!(dirs[0], Direction::RIGHT);
        assert_eq!(dirs[1], Direction::LEFT);
        assert!(Direction::new(3, Sign::Plus, 2).is_err());
    }
}
