//! Oriented-percolation connectivity: reachable sets, survival, coupled zones,
//! conditional survival margins and a finite-size critical-point proxy.
//!
//! Connectivity follows the usual convention: an open path from `(s, A)` to
//! `(t, B)` needs its sites at times `s+1..=t` open, while the start site may be
//! closed. Sources spanning all of `Z^d` are truncated to the ℓ∞ box that can
//! reach the window in the elapsed time, which loses nothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{derive_seed, Environment, EnvironmentWindow, SliceView};
use crate::error::{invalid, Error, Result};
use crate::lattice::{check_dim, Cube, Pos};

/// A set of positions at time `t`, packed as bits over a box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachSet {
    t: u64,
    cube: Cube,
    words: Vec<u64>,
}

impl ReachSet {
    fn empty(t: u64, cube: Cube) -> Self {
        ReachSet { t, cube, words: vec![0; cube.len().div_ceil(64)] }
    }

    fn insert(&mut self, x: &Pos) {
        let i = self.cube.index(x).expect("position inside reach box");
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn contains(&self, x: &Pos) -> bool {
        self.cube.index(x).is_some_and(|i| self.words[i / 64] >> (i % 64) & 1 == 1)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Members in lexicographic order.
    pub fn positions(&self) -> Vec<Pos> {
        let mut out = Vec::new();
        for (wi, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let b = w.trailing_zeros() as usize;
                out.push(self.cube.pos(wi * 64 + b));
                w &= w - 1;
            }
        }
        out
    }

    pub fn intersects(&self, targets: &[Pos]) -> bool {
        targets.iter().any(|y| self.contains(y))
    }

    pub fn is_subset_of(&self, other: &ReachSet) -> bool {
        self.positions().iter().all(|x| other.contains(x))
    }
}

/// Smallest box holding `sources`, grown by `margin`.
fn enclosing_cube(d: usize, sources: &[Pos], margin: i64) -> Cube {
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for a in sources {
        for i in 0..d {
            lo[i] = lo[i].min(a.0[i]);
            hi[i] = hi[i].max(a.0[i]);
        }
    }
    let mut center = [0; 3];
    let mut half = 0;
    for i in 0..d {
        center[i] = lo[i] + (hi[i] - lo[i]) / 2;
        half = half.max(hi[i] - center[i]).max(center[i] - lo[i]);
    }
    Cube::new(d, Pos(center), half + margin)
}

/// `dst |= src` moved up (`up = true`) or down by `s` bit positions.
fn or_shifted(dst: &mut [u64], src: &[u64], s: usize, up: bool) {
    let (ws, bs) = (s / 64, s % 64);
    let n = src.len();
    if ws >= n {
        return;
    }
    if up {
        for i in (ws..n).rev() {
            let mut v = src[i - ws] << bs;
            if bs > 0 && i > ws {
                v |= src[i - ws - 1] >> (64 - bs);
            }
            dst[i] |= v;
        }
    } else {
        for i in 0..n - ws {
            let mut v = src[i + ws] >> bs;
            if bs > 0 && i + ws + 1 < n {
                v |= src[i + ws + 1] << (64 - bs);
            }
            dst[i] |= v;
        }
    }
}

struct Stepper {
    cube: Cube,
    strides: [usize; 3],
    scratch: Vec<u64>,
}

impl Stepper {
    fn new(cube: Cube) -> Self {
        Stepper { cube, strides: cube.strides(), scratch: vec![0; cube.len().div_ceil(64)] }
    }

    /// Replaces `words` by its ℓ₁ unit neighbourhood, then keeps only open sites
    /// when `slice` is given. Bits never wrap because the box has room for the
    /// whole cone.
    fn step(&mut self, words: &mut [u64], slice: Option<&SliceView<'_>>) {
        self.scratch.copy_from_slice(words);
        for axis in 0..self.cube.d {
            or_shifted(words, &self.scratch, self.strides[axis], true);
            or_shifted(words, &self.scratch, self.strides[axis], false);
        }
        let last = self.cube.len() % 64;
        if last != 0 {
            let n = words.len();
            words[n - 1] &= (1u64 << last) - 1;
        }
        let Some(slice) = slice else { return };
        match slice.constant() {
            Some(true) => {}
            Some(false) => words.iter_mut().for_each(|w| *w = 0),
            None => {
                for (wi, word) in words.iter_mut().enumerate() {
                    let mut w = *word;
                    while w != 0 {
                        let b = w.trailing_zeros() as usize;
                        w &= w - 1;
                        if !slice.is_open(&self.cube.pos(wi * 64 + b)) {
                            *word &= !(1u64 << b);
                        }
                    }
                }
            }
        }
    }
}

fn check_sources(env: &Environment, sources: &[Pos]) -> Result<()> {
    if sources.iter().any(|x| (env.d()..3).any(|i| x.0[i] != 0)) {
        return invalid(format!("source position has more than {} coordinates", env.d()));
    }
    Ok(())
}

/// Positions at time `t` reached by open paths from `(s, A)`.
pub fn reach_forward(env: &Environment, s: u64, sources: &[Pos], t: u64) -> Result<ReachSet> {
    if s > t {
        return invalid(format!("reach_forward needs s <= t, got {s} > {t}"));
    }
    check_sources(env, sources)?;
    let elapsed = (t - s) as i64;
    if sources.is_empty() {
        return Ok(ReachSet::empty(t, Cube::new(env.d(), Pos::ORIGIN, elapsed)));
    }
    let cube = enclosing_cube(env.d(), sources, elapsed);
    env.check_window(t, &cube.center, cube.radius)?;
    let mut set = ReachSet::empty(s, cube);
    for a in sources {
        set.insert(a);
    }
    let mut stepper = Stepper::new(cube);
    for r in s + 1..=t {
        let slice = env.slice(r);
        stepper.step(&mut set.words, Some(&slice));
        if set.is_empty() {
            break;
        }
    }
    set.t = t;
    Ok(set)
}

/// Last time `r <= s + max_steps` at which the forward cluster of `(s, A)` is
/// nonempty; `s + max_steps` means it survived the whole run.
pub fn lifetime(env: &Environment, s: u64, sources: &[Pos], max_steps: u64) -> Result<u64> {
    check_sources(env, sources)?;
    if sources.is_empty() {
        return invalid("lifetime of an empty source set");
    }
    let cube = enclosing_cube(env.d(), sources, max_steps as i64);
    env.check_window(s + max_steps, &cube.center, cube.radius)?;
    let mut set = ReachSet::empty(s, cube);
    for a in sources {
        set.insert(a);
    }
    let mut stepper = Stepper::new(cube);
    for r in s + 1..=s + max_steps {
        let slice = env.slice(r);
        stepper.step(&mut set.words, Some(&slice));
        if set.is_empty() {
            return Ok(r - 1);
        }
    }
    Ok(s + max_steps)
}

/// Whether `(s, A)` is joined to `(t, B)` by an open path.
pub fn connected(env: &Environment, s: u64, sources: &[Pos], t: u64, targets: &[Pos]) -> Result<bool> {
    Ok(reach_forward(env, s, sources, t)?.intersects(targets))
}

/// Whether `(s, A)` is joined to the whole slice at time `t`.
pub fn connected_to_slice(env: &Environment, s: u64, sources: &[Pos], t: u64) -> Result<bool> {
    Ok(!reach_forward(env, s, sources, t)?.is_empty())
}

/// Positions `x` at time `s` with `(s, x)` joined to `(t, B)`. Targets closed at
/// time `t` are dropped when `t > s`, since an open path must end on an open site.
pub fn reach_backward(env: &Environment, t: u64, targets: &[Pos], s: u64) -> Result<ReachSet> {
    if s > t {
        return invalid(format!("reach_backward needs s <= t, got {s} > {t}"));
    }
    check_sources(env, targets)?;
    let elapsed = (t - s) as i64;
    if targets.is_empty() {
        return Ok(ReachSet::empty(s, Cube::new(env.d(), Pos::ORIGIN, elapsed)));
    }
    let cube = enclosing_cube(env.d(), targets, elapsed);
    env.check_window(t, &cube.center, cube.radius)?;
    let mut set = ReachSet::empty(t, cube);
    let top = env.slice(t);
    for b in targets {
        if t == s || top.is_open(b) {
            set.insert(b);
        }
    }
    let mut stepper = Stepper::new(cube);
    let mut r = t;
    while r > s && !set.is_empty() {
        r -= 1;
        if r > s {
            let slice = env.slice(r);
            stepper.step(&mut set.words, Some(&slice));
        } else {
            stepper.step(&mut set.words, None);
        }
    }
    set.t = s;
    Ok(set)
}

/// All positions of the ℓ∞ box `center + [-radius, radius]^d`.
pub fn box_positions(d: usize, center: Pos, radius: i64) -> Vec<Pos> {
    Cube::new(d, center, radius).positions().collect()
}

/// Monte Carlo survival probability with its binomial standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub p: f64,
    pub d: usize,
    pub horizon: u64,
    pub buffer: u64,
    pub samples: usize,
    pub hits: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub seed: u64,
}

pub(crate) fn binomial(hits: usize, samples: usize) -> (f64, f64) {
    if samples == 0 {
        return (0.0, 0.0);
    }
    let f = hits as f64 / samples as f64;
    (f, (f * (1.0 - f) / samples as f64).sqrt())
}

/// Estimates `P((0,0) ↔ (T + buffer, Z^d))`, a proxy for survival to infinity.
/// Sample `i` reads the field seeded by `derive_seed(seed, "survival", i)`.
pub fn survival_estimate(d: usize, p: f64, horizon: u64, buffer: u64, samples: usize, seed: u64) -> Result<SurvivalEstimate> {
    check_dim(d)?;
    if horizon == 0 {
        return invalid("survival horizon must be at least 1");
    }
    let reach = horizon + buffer;
    let hits: Result<Vec<bool>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let env = Environment::from_seed(derive_seed(seed, "survival", i as u64), d, p)?;
            Ok(lifetime(&env, 0, &[Pos::ORIGIN], reach)? == reach)
        })
        .collect();
    let hits = hits?.into_iter().filter(|&h| h).count();
    let (estimate, stderr) = binomial(hits, samples);
    Ok(SurvivalEstimate { p, d, horizon, buffer, samples, hits, estimate, stderr, seed })
}

/// Finite-size crossing point: bisection on `p` for the survival fraction at
/// horizon `T` to reach `threshold`. All probes share the same seeds, so the
/// bracket is monotone sample by sample. This is a proxy for the critical value.
pub fn critical_estimate(d: usize, horizon: u64, samples: usize, tol: f64, seed: u64) -> Result<f64> {
    critical_estimate_with(d, horizon, samples, tol, 0.5, seed)
}

pub fn critical_estimate_with(d: usize, horizon: u64, samples: usize, tol: f64, threshold: f64, seed: u64) -> Result<f64> {
    if tol <= 0.0 || !tol.is_finite() {
        return invalid(format!("tolerance must be positive, got {tol}"));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if survival_estimate(d, mid, horizon, 0, samples, seed)?.estimate >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Cone speed and depth of a coupled zone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledZoneParams {
    pub v: f64,
    pub k: u64,
}

impl CoupledZoneParams {
    /// Default speed `1/(2d)`.
    pub fn new(d: usize, k: u64) -> Self {
        CoupledZoneParams { v: 1.0 / (2.0 * d as f64), k }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.v > 0.0 && self.v <= 1.0 / d as f64) {
            return invalid(format!("cone speed {} outside (0, 1/d]", self.v));
        }
        Ok(())
    }

    fn half_width(&self) -> i64 {
        (self.k as f64 * self.v + 1e-9).floor() as i64
    }
}

/// Forward coupled zone at `(n, x)`: `(n,x)` reaches time `n+k`, and every `y`
/// in `x + [-kv, kv]^d` reached from the slice at time `n` is reached from `x`.
pub fn coupled_zone_check(env: &Environment, n: u64, x: Pos, params: &CoupledZoneParams) -> Result<bool> {
    params.validate(env.d())?;
    let k = params.k;
    let from_x = reach_forward(env, n, &[x], n + k)?;
    if from_x.is_empty() {
        return Ok(false);
    }
    let from_all = reach_forward(env, n, &box_positions(env.d(), x, 2 * k as i64), n + k)?;
    let w = params.half_width();
    Ok(box_positions(env.d(), x, w).iter().all(|y| !from_all.contains(y) || from_x.contains(y)))
}

/// Backward coupled zone at `(n, x)`: the slice at `n-k` reaches `(n, x)`, and
/// every `y` in the window at time `n-k` that reaches time `n` also reaches `x`.
pub fn coupled_zone_check_backward(env: &Environment, n: u64, x: Pos, params: &CoupledZoneParams) -> Result<bool> {
    params.validate(env.d())?;
    let k = params.k;
    if k > n {
        return invalid(format!("backward zone depth {k} exceeds time {n}"));
    }
    let to_x = reach_backward(env, n, &[x], n - k)?;
    if to_x.is_empty() {
        return Ok(false);
    }
    let to_all = reach_backward(env, n, &box_positions(env.d(), x, 2 * k as i64), n - k)?;
    let w = params.half_width();
    Ok(box_positions(env.d(), x, w).iter().all(|y| !to_all.contains(y) || to_x.contains(y)))
}

/// Fraction of `samples` fresh i.i.d. Bernoulli(p) environments in which the
/// set `start` (placed at time 0) survives `steps` steps.
pub fn survival_fraction(start: &[Pos], d: usize, p: f64, steps: u64, samples: usize, seed: u64) -> Result<(usize, usize)> {
    if start.is_empty() {
        return Ok((0, samples));
    }
    if p >= 1.0 {
        return Ok((samples, samples));
    }
    let mut hits = 0;
    for i in 0..samples {
        let env = Environment::from_seed(derive_seed(seed, "future", i as u64), d, p)?;
        if lifetime(&env, 0, start, steps)? == steps {
            hits += 1;
        }
    }
    Ok((hits, samples))
}

fn future_law(env: &Environment, t: u64) -> Result<f64> {
    env.law_at(t).ok_or_else(|| Error::InvalidArgument(format!("slice {t} has no Bernoulli law to resample from")))
}

/// Estimate of `P((n,x) ↔ (n+H, Z^d) | F_[n, n+k])` for the window `[n, n+k]`:
/// the window is frozen and the times after it are resampled from the window's
/// law `inner_samples` times.
pub fn conditional_survival_margin(window: &EnvironmentWindow<'_>, x: Pos, horizon: u64, inner_samples: usize, seed: u64) -> Result<f64> {
    let (n, end) = (window.start(), window.end());
    let k = end - n;
    if horizon < k {
        return invalid(format!("horizon {horizon} shorter than window length {k}"));
    }
    let env = window.env();
    let frozen = reach_forward(env, n, &[x], end)?;
    if frozen.is_empty() {
        return Ok(0.0);
    }
    let p = future_law(env, end)?;
    let (hits, total) = survival_fraction(&frozen.positions(), env.d(), p, horizon - k, inner_samples, seed)?;
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Backward counterpart for the window `[t-j, t]`: estimate of
/// `P(-∞ ↔ (t,x) | F_[t-j, t])`, with the past before `t-j` resampled. By time
/// reversal the past is run forward from the open sites at `t-j` that reach `x`.
pub fn backward_survival_margin(window: &EnvironmentWindow<'_>, x: Pos, horizon: u64, inner_samples: usize, seed: u64) -> Result<f64> {
    let (s, t) = (window.start(), window.end());
    let j = t - s;
    if horizon < j {
        return invalid(format!("horizon {horizon} shorter than window length {j}"));
    }
    let env = window.env();
    let back = reach_backward(env, t, &[x], s)?;
    let bottom = env.slice(s);
    let open: Vec<Pos> = back.positions().into_iter().filter(|y| bottom.is_open(y)).collect();
    if open.is_empty() {
        return Ok(0.0);
    }
    let p = future_law(env, s)?;
    let (hits, total) = survival_fraction(&open, env.d(), p, horizon - j, inner_samples, seed)?;
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
