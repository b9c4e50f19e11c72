//! Coupling events around a resampled slice and the slab-coupled martingale
//! difference.
//!
//! Good events are decided by nested Monte Carlo: the margin
//! `P((t,x) ↔ ∞ | F_[t,t+j])` is estimated with [`conditional_survival_margin`]
//! and compared with `1 - e^{-cj}`. The universally quantified path events are
//! decided exactly by dynamic programming over positions (and, for the
//! positive-temperature versions, capped energies), never by sampling paths.
//! Repair events reduce to pairs of pinned endpoints: for the zero-temperature
//! version a reachability question in the slab environment, for the positive-
//! temperature one a comparison of minimal energies.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{derive_seed, mix64, Environment};
use crate::error::{invalid, Error, Result};
use crate::lattice::{unit_steps, LatticePoint, Pos};
use crate::perco::{backward_survival_margin, box_positions, conditional_survival_margin, reach_forward};
use crate::polymer::{regularized_log, total_energy, ExtendedBeta, Path};
use crate::stats::Moments;

/// The length `n`, the auxiliary scale `ℓ` and the slab length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub n: u64,
    pub ell: u64,
    pub slab_len: u64,
}

impl ScaleParams {
    /// `ℓ = ⌊(log n)²⌋` (at least 1) and slab length `ℓ⁴`.
    pub fn new(n: u64) -> Self {
        let ell = ((n.max(1) as f64).ln().powi(2).floor() as u64).max(1);
        Self::with_ell(n, ell)
    }

    pub fn with_ell(n: u64, ell: u64) -> Self {
        ScaleParams { n, ell, slab_len: ell.saturating_pow(4) }
    }

    pub fn with_slab(mut self, slab_len: u64) -> Self {
        self.slab_len = slab_len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ell == 0 || self.slab_len == 0 {
            return invalid(format!("scale needs ell >= 1 and slab_len >= 1, got {self:?}"));
        }
        Ok(())
    }

    pub fn ell2(&self) -> u64 {
        self.ell * self.ell
    }

    /// Last time `(k-1-2ℓ²)₊` at which a repair must follow the original path.
    pub fn prefix_end(&self, k: u64) -> u64 {
        k.saturating_sub(1 + 2 * self.ell2())
    }

    /// The suffix pinning `k+ℓ² <= j <= n-L` is empty.
    pub fn suffix_void(&self, k: u64) -> bool {
        k + self.ell2() + self.slab_len > self.n
    }
}

/// How good events are decided.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    /// Rate `c` in the threshold `1 - e^{-cj}`.
    pub c: f64,
    /// Extra horizon beyond the frozen window: `H = j + horizon_extra`.
    pub horizon_extra: u64,
    pub inner_samples: usize,
    /// Margins within `band` of the threshold are counted as near-threshold.
    pub band: f64,
    pub seed: u64,
    /// Hard limit on margin evaluations per checker call.
    pub max_evaluations: usize,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig { c: 0.05, horizon_extra: 200, inner_samples: 64, band: 0.02, seed: 0, max_evaluations: 200_000 }
    }
}

impl MarginConfig {
    pub fn threshold(&self, j: u64) -> f64 {
        1.0 - (-self.c * j as f64).exp()
    }
}

fn site_key(t: u64, x: &Pos, j: u64) -> u64 {
    let mut h = mix64(t ^ 0x5851_F42D_4C95_7F2D);
    for c in x.0 {
        h = mix64(h ^ c as u64);
    }
    mix64(h ^ j)
}

/// Memoised good-event decisions for one environment.
pub struct GoodOracle<'a> {
    env: &'a Environment,
    cfg: &'a MarginConfig,
    forward: HashMap<(u64, Pos, u64), bool>,
    backward: HashMap<(u64, Pos, u64), bool>,
    pub evaluations: usize,
    pub near_threshold: usize,
}

impl<'a> GoodOracle<'a> {
    pub fn new(env: &'a Environment, cfg: &'a MarginConfig) -> Self {
        GoodOracle { env, cfg, forward: HashMap::new(), backward: HashMap::new(), evaluations: 0, near_threshold: 0 }
    }

    fn decide(&mut self, margin: f64, j: u64) -> bool {
        let th = self.cfg.threshold(j);
        if (margin - th).abs() < self.cfg.band {
            self.near_threshold += 1;
        }
        margin >= th
    }

    fn budget(&mut self) -> Result<()> {
        self.evaluations += 1;
        if self.evaluations > self.cfg.max_evaluations {
            return Err(Error::ResourceCap {
                what: "good-event margin evaluations",
                needed: self.evaluations as u128,
                cap: self.cfg.max_evaluations as u128,
            });
        }
        Ok(())
    }

    /// `G_j^{t,x}`: `P((t,x) ↔ ∞ | F_[t,t+j]) >= 1 - e^{-cj}`.
    pub fn good(&mut self, t: u64, x: Pos, j: u64) -> Result<bool> {
        if let Some(&g) = self.forward.get(&(t, x, j)) {
            return Ok(g);
        }
        self.budget()?;
        let window = self.env.window(t, t + j)?;
        let seed = derive_seed(self.cfg.seed, "good", site_key(t, &x, j));
        let margin = conditional_survival_margin(&window, x, j + self.cfg.horizon_extra, self.cfg.inner_samples, seed)?;
        let g = self.decide(margin, j);
        self.forward.insert((t, x, j), g);
        Ok(g)
    }

    /// `G_{j,j+1}^{t,x} = G_j^{t,x} ∩ G_{j+1}^{t,x}`.
    pub fn good_pair(&mut self, t: u64, x: Pos, j: u64) -> Result<bool> {
        Ok(self.good(t, x, j)? && self.good(t, x, j + 1)?)
    }

    /// Backward `G̃_j^{t,x}`: `P(-∞ ↔ (t,x) | F_[t-j,t]) >= 1 - e^{-cj}`.
    pub fn good_backward(&mut self, t: u64, x: Pos, j: u64) -> Result<bool> {
        if let Some(&g) = self.backward.get(&(t, x, j)) {
            return Ok(g);
        }
        if j > t {
            return invalid(format!("backward window of length {j} before time 0 at t={t}"));
        }
        self.budget()?;
        let window = self.env.window(t - j, t)?;
        let seed = derive_seed(self.cfg.seed, "good-back", site_key(t, &x, j));
        let margin = backward_survival_margin(&window, x, j + self.cfg.horizon_extra, self.cfg.inner_samples, seed)?;
        let g = self.decide(margin, j);
        self.backward.insert((t, x, j), g);
        Ok(g)
    }
}

/// A path together with another path that repairs it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairPair {
    pub original: Path,
    pub repair: Path,
    pub original_energy: u64,
    pub repair_energy: u64,
}

/// Outcome of one event check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub event: String,
    pub holds: bool,
    /// A path violating a universally quantified event.
    pub counterexample: Option<Path>,
    /// A site violating a per-site event.
    pub failing_site: Option<LatticePoint>,
    /// Repair witnesses, one per pinned endpoint pair, for repair events.
    pub repairs: Vec<RepairPair>,
    /// The witness list was truncated at its cap.
    pub caps_hit: bool,
    pub near_threshold: usize,
    pub good_evaluations: usize,
    pub suffix_void: bool,
}

impl EventReport {
    fn new(event: &str) -> Self {
        EventReport {
            event: event.to_string(),
            holds: true,
            counterexample: None,
            failing_site: None,
            repairs: Vec::new(),
            caps_hit: false,
            near_threshold: 0,
            good_evaluations: 0,
            suffix_void: false,
        }
    }

    fn absorb(&mut self, oracle: &GoodOracle<'_>) {
        self.near_threshold = oracle.near_threshold;
        self.good_evaluations = oracle.evaluations;
    }
}

/// Cap on the number of repair witnesses built per report.
pub const MAX_WITNESSES: usize = 256;

fn neighbours(d: usize, x: &Pos) -> impl Iterator<Item = Pos> + '_ {
    unit_steps(d).into_iter().map(move |s| *x + s)
}

/// Open-path layers from `(s, sources)` to `t`; `keep(t, x)` can veto sites.
fn open_layers(
    env: &Environment,
    s: u64,
    sources: BTreeSet<Pos>,
    t: u64,
    mut keep: impl FnMut(u64, &Pos) -> Result<bool>,
) -> Result<Vec<BTreeSet<Pos>>> {
    let d = env.d();
    let mut layers = vec![sources];
    for r in s + 1..=t {
        let slice = env.slice(r);
        let prev = layers.last().expect("nonempty");
        let mut next = BTreeSet::new();
        for x in prev {
            for y in neighbours(d, x) {
                if !next.contains(&y) && slice.is_open(&y) && keep(r, &y)? {
                    next.insert(y);
                }
            }
        }
        env.check_window(r, &Pos::ORIGIN, next.iter().map(|p| p.linf()).max().unwrap_or(0))?;
        layers.push(next);
    }
    Ok(layers)
}

/// Walks back from `end` through `layers` (indexed from time `s`), taking the
/// smallest admissible predecessor.
fn backtrace(s: u64, layers: &[BTreeSet<Pos>], end: Pos) -> Path {
    let mut positions = vec![end];
    let mut cur = end;
    for layer in layers[..layers.len() - 1].iter().rev() {
        let prev = layer.iter().copied().find(|x| x.l1_dist(&cur) <= 1).expect("every layer member has a predecessor");
        positions.push(prev);
        cur = prev;
    }
    positions.reverse();
    Path { start: s, positions }
}

fn open_path(env: &Environment, s: u64, from: Pos, t: u64, to: Option<Pos>) -> Result<Option<Path>> {
    let layers = open_layers(env, s, BTreeSet::from([from]), t, |_, _| Ok(true))?;
    let last = layers.last().expect("nonempty");
    let end = match to {
        Some(y) => last.contains(&y).then_some(y),
        None => last.iter().next().copied(),
    };
    Ok(end.map(|y| backtrace(s, &layers, y)))
}

fn concat(parts: &[&Path]) -> Path {
    let mut positions = parts[0].positions.clone();
    for p in &parts[1..] {
        debug_assert_eq!(positions.last(), p.positions.first());
        positions.extend_from_slice(&p.positions[1..]);
    }
    Path { start: parts[0].start, positions }
}

/// `A^conn`: every open path `(0,0) → (k, Z^d)` passes, for some
/// `j ∈ [ℓ², 2ℓ² ∧ k]`, through a point `(k-j, π(k-j))` in `G_{j,j+1}`.
pub fn check_a_conn(env: &Environment, scale: &ScaleParams, k: u64, cfg: &MarginConfig) -> Result<EventReport> {
    scale.validate()?;
    let l2 = scale.ell2();
    if k < l2 || k > scale.n {
        return invalid(format!("A^conn needs ell^2 <= k <= n, got k={k}, {scale:?}"));
    }
    let mut report = EventReport::new("A_conn");
    let mut oracle = GoodOracle::new(env, cfg);
    let lo = k - (2 * l2).min(k);
    let hi = k - l2;
    let mut start = BTreeSet::from([Pos::ORIGIN]);
    if lo == 0 && oracle.good_pair(0, Pos::ORIGIN, k)? {
        start.clear();
    }
    let layers = if start.is_empty() {
        vec![start]
    } else {
        open_layers(env, 0, start, k, |t, x| if t >= lo && t <= hi { Ok(!oracle.good_pair(t, *x, k - t)?) } else { Ok(true) })?
    };
    if layers.len() as u64 == k + 1 {
        if let Some(&end) = layers[k as usize].iter().next() {
            report.holds = false;
            report.counterexample = Some(backtrace(0, &layers, end));
        }
    }
    report.absorb(&oracle);
    Ok(report)
}

/// `Ā`: for every `x ∈ [-k-ℓ², k+ℓ²]^d`, either `G̃^{k+ℓ²,x}_{ℓ²-1}` or
/// `(k+1, Z^d) ↛ (k+ℓ², x)`.
pub fn check_a_bar(env: &Environment, scale: &ScaleParams, k: u64, cfg: &MarginConfig) -> Result<EventReport> {
    scale.validate()?;
    let l2 = scale.ell2();
    let d = env.d();
    let mut report = EventReport::new("A_bar");
    let mut oracle = GoodOracle::new(env, cfg);
    let t = k + l2;
    let radius = (k + l2) as i64;
    let span = (l2 - 1) as i64;
    let reached = reach_forward(env, k + 1, &box_positions(d, Pos::ORIGIN, radius + span), t)?;
    for x in box_positions(d, Pos::ORIGIN, radius) {
        if reached.contains(&x) && !oracle.good_backward(t, x, l2 - 1)? {
            report.holds = false;
            report.failing_site = Some(LatticePoint::new(t, x));
            break;
        }
    }
    report.absorb(&oracle);
    Ok(report)
}

/// State of the energy-capped path search: position, closed sites seen in the
/// energy window (capped at `ℓ`), and whether the near-good alternative exists.
type EState = (Pos, u64, bool);

fn cone(d: usize, center: Pos, r: u64) -> Vec<Pos> {
    box_positions(d, center, r as i64).into_iter().filter(|y| y.l1_dist(&center) <= r as i64).collect()
}

/// Forward search over all paths (not only open ones) with capped energy.
/// Starts from `init` at time `s`; at each time `r` in `s+1..=t`, `blocked`
/// removes positions and `energy(r)` says whether closed sites count. The flag
/// is carried unchanged. Returns the layers with predecessor links.
fn energy_search(
    env: &Environment,
    s: u64,
    init: Vec<EState>,
    t: u64,
    cap: u64,
    mut blocked: impl FnMut(u64, &Pos) -> Result<bool>,
    energy: impl Fn(u64) -> bool,
) -> Result<Vec<BTreeMap<EState, Option<EState>>>> {
    let d = env.d();
    let mut layers: Vec<BTreeMap<EState, Option<EState>>> = vec![init.into_iter().map(|st| (st, None)).collect()];
    for r in s + 1..=t {
        let slice = env.slice(r);
        let mut next = BTreeMap::new();
        let mut verdict: HashMap<Pos, bool> = HashMap::new();
        for &(x, h, f) in layers.last().expect("nonempty").keys() {
            for y in neighbours(d, &x) {
                let ok = match verdict.get(&y) {
                    Some(&v) => v,
                    None => {
                        let v = !blocked(r, &y)?;
                        verdict.insert(y, v);
                        v
                    }
                };
                if !ok {
                    continue;
                }
                let h2 = if energy(r) && !slice.is_open(&y) { (h + 1).min(cap) } else { h };
                next.entry((y, h2, f)).or_insert(Some((x, h, f)));
            }
        }
        layers.push(next);
    }
    Ok(layers)
}

fn trace_states(s: u64, layers: &[BTreeMap<EState, Option<EState>>], end: EState) -> Path {
    let mut positions = vec![end.0];
    let mut cur = end;
    for layer in layers.iter().rev() {
        match layer.get(&cur).copied().flatten() {
            Some(prev) => {
                positions.push(prev.0);
                cur = prev;
            }
            None => break,
        }
    }
    positions.reverse();
    Path { start: s + layers.len() as u64 - positions.len() as u64, positions }
}

/// `B^conn`: every path from `(0,0)` either passes a `G_{j,j+1}` point for some
/// `j ∈ [ℓ², 2ℓ² ∧ k]`, or has energy at least `ℓ` on `(k-2ℓ², k-ℓ²]` and a
/// `G_{2ℓ²-ℓ, 2ℓ²-ℓ+1}` point at time `k-2ℓ²+ℓ` within ℓ∞ distance `ℓ` of
/// `π(k-2ℓ²)`. The second alternative is dropped when `k < 2ℓ²`.
pub fn check_b_conn(env: &Environment, scale: &ScaleParams, k: u64, cfg: &MarginConfig) -> Result<EventReport> {
    scale.validate()?;
    let (l, l2) = (scale.ell, scale.ell2());
    if k < l2 || k > scale.n {
        return invalid(format!("B^conn needs ell^2 <= k <= n, got k={k}, {scale:?}"));
    }
    let d = env.d();
    let mut report = EventReport::new("B_conn");
    let mut oracle = GoodOracle::new(env, cfg);
    let lo = k - (2 * l2).min(k);
    let hi = k - l2;
    let second = k >= 2 * l2;
    let jn = 2 * l2 - l.min(2 * l2);
    let mut init = Vec::new();
    for x in cone(d, Pos::ORIGIN, lo) {
        if oracle.good_pair(lo, x, k - lo)? {
            continue;
        }
        let near = if second { near_good(&mut oracle, lo, x, l, jn)? } else { false };
        init.push((x, 0, near));
    }
    let layers = energy_search(env, lo, init, hi, l, |t, x| oracle.good_pair(t, *x, k - t), |t| second && t > lo && t <= hi)?;
    let last = layers.last().expect("nonempty");
    let bad = last.keys().find(|(_, h, near)| !second || *h < l || !*near).copied();
    if let Some(end) = bad {
        report.holds = false;
        let tail = trace_states(lo, &layers, end);
        let head = straight_path(d, 0, Pos::ORIGIN, tail.positions[0], lo);
        report.counterexample = Some(concat(&[&head, &tail]));
    }
    report.absorb(&oracle);
    Ok(report)
}

fn near_good(oracle: &mut GoodOracle<'_>, t: u64, z: Pos, l: u64, jn: u64) -> Result<bool> {
    let d = oracle.env.d();
    let tt = t + l;
    for x in box_positions(d, z, l as i64) {
        if oracle.good_pair(tt, x, jn)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// A fixed path from `(s, a)` to `(s+len, b)` moving one coordinate at a time.
fn straight_path(d: usize, s: u64, a: Pos, b: Pos, len: u64) -> Path {
    let mut positions = vec![a];
    let mut cur = a;
    for _ in 0..len {
        if let Some(i) = (0..d).find(|&i| cur.0[i] != b.0[i]) {
            cur.0[i] += (b.0[i] - cur.0[i]).signum();
        }
        positions.push(cur);
    }
    debug_assert_eq!(cur, b);
    Path { start: s, positions }
}

/// `B̄`: every path from `(k, [-n,n]^d)` to time `k+2ℓ²` either passes a point
/// `(k+j, π(k+j))` in `G̃_{j-1}` for some `j ∈ [ℓ², 2ℓ²]`, or has energy at least
/// `ℓ` on `(k+ℓ², k+2ℓ²]` and a `G̃_{2ℓ²-ℓ-1}` point at time `k+2ℓ²-ℓ` within ℓ∞
/// distance `ℓ` of `π(k+2ℓ²)`.
pub fn check_b_bar(env: &Environment, scale: &ScaleParams, k: u64, cfg: &MarginConfig) -> Result<EventReport> {
    scale.validate()?;
    let (l, l2, n) = (scale.ell, scale.ell2(), scale.n);
    let d = env.d();
    let mut report = EventReport::new("B_bar");
    let mut oracle = GoodOracle::new(env, cfg);
    let lo = k + l2;
    let hi = k + 2 * l2;
    let mut init = Vec::new();
    let excess = |x: &Pos| (0..d).map(|i| (x.0[i].abs() - n as i64).max(0)).sum::<i64>();
    for x in box_positions(d, Pos::ORIGIN, (n + l2) as i64) {
        if excess(&x) > l2 as i64 {
            continue;
        }
        if !oracle.good_backward(lo, x, l2 - 1)? {
            init.push((x, 0, false));
        }
    }
    let layers = energy_search(env, lo, init, hi, l, |t, x| oracle.good_backward(t, *x, t - k - 1), |t| t > lo && t <= hi)?;
    let jn = (2 * l2).saturating_sub(l + 1);
    let t_near = hi - l.min(2 * l2);
    let mut bad = None;
    for &(x, h, f) in layers.last().expect("nonempty").keys() {
        if h < l {
            bad = Some((x, h, f));
            break;
        }
        let mut near = false;
        for y in box_positions(d, x, l as i64) {
            if oracle.good_backward(t_near, y, jn.min(t_near))? {
                near = true;
                break;
            }
        }
        if !near {
            bad = Some((x, h, f));
            break;
        }
    }
    if let Some(end) = bad {
        report.holds = false;
        let tail = trace_states(lo, &layers, end);
        let x0 = tail.positions[0];
        let mut from = x0;
        for i in 0..d {
            from.0[i] = from.0[i].clamp(-(n as i64), n as i64);
        }
        let head = straight_path(d, k, from, x0, l2);
        report.counterexample = Some(concat(&[&head, &tail]));
    }
    report.absorb(&oracle);
    Ok(report)
}

fn repair_setup(b: &Environment, sl: &Environment, e: &Environment, scale: &ScaleParams, k: u64) -> Result<(Environment, Environment)> {
    scale.validate()?;
    if k == 0 || k > scale.n {
        return invalid(format!("repair events need 1 <= k <= n, got k={k}, n={}", scale.n));
    }
    Ok((Environment::splice(b, e, k)?, Environment::splice_slab(b, sl, e, k - 1, k + scale.slab_len)?))
}

/// `A^repair`: every open path `π₁` of length `n` in `[b,e]_k` has an open
/// `π₂` in `[b,sl,e]_{k-1,k+L}` with `π₂ = π₁` up to `(k-1-2ℓ²)₊` and
/// `π₂(j+L) = π₁(j)` for `k+ℓ² <= j <= n-L`.
pub fn check_a_repair(b: &Environment, sl: &Environment, e: &Environment, scale: &ScaleParams, k: u64) -> Result<EventReport> {
    let (e1, e2) = repair_setup(b, sl, e, scale, k)?;
    let (n, big_l) = (scale.n, scale.slab_len);
    let p = scale.prefix_end(k);
    let s0 = k + scale.ell2();
    let void = scale.suffix_void(k);
    let mut report = EventReport::new("A_repair");
    report.suffix_void = void;
    let prefix_layers = open_layers(&e1, 0, BTreeSet::from([Pos::ORIGIN]), p, |_, _| Ok(true))?;
    for &a in prefix_layers.last().expect("nonempty") {
        let prefix = backtrace(0, &prefix_layers, a);
        if void {
            let Some(tail1) = open_path(&e1, p, a, n, None)? else { continue };
            let original = concat(&[&prefix, &tail1]);
            match open_path(&e2, p, a, n, None)? {
                None => {
                    report.holds = false;
                    report.counterexample = Some(original);
                    return Ok(report);
                }
                Some(tail2) => push_repair(&mut report, original, concat(&[&prefix, &tail2]), 0, 0),
            }
            continue;
        }
        let mid_layers = open_layers(&e1, p, BTreeSet::from([a]), s0, |_, _| Ok(true))?;
        let slab_reach = reach_forward(&e2, p, &[a], s0 + big_l)?;
        for &bb in mid_layers.last().expect("nonempty") {
            let Some(tail1) = open_path(&e1, s0, bb, n, None)? else { continue };
            let mid1 = backtrace(p, &mid_layers, bb);
            let original = concat(&[&prefix, &mid1, &tail1]);
            if !slab_reach.contains(&bb) {
                report.holds = false;
                report.counterexample = Some(original);
                return Ok(report);
            }
            if report.repairs.len() < MAX_WITNESSES {
                let mid2 = open_path(&e2, p, a, s0 + big_l, Some(bb))?.expect("reachable endpoint has a path");
                let suffix = Path { start: s0 + big_l, positions: tail1.positions[..=(n - big_l - s0) as usize].to_vec() };
                let repair = concat(&[&prefix, &mid2, &suffix]);
                push_repair(&mut report, original, repair, 0, 0);
            } else {
                report.caps_hit = true;
            }
        }
    }
    Ok(report)
}

fn push_repair(report: &mut EventReport, original: Path, repair: Path, h1: u64, h2: u64) {
    if report.repairs.len() < MAX_WITNESSES {
        report.repairs.push(RepairPair { original, repair, original_energy: h1, repair_energy: h2 });
    } else {
        report.caps_hit = true;
    }
}

/// Minimal energies from `(s, a)`, counting closed sites at times in `(count_after, t]`.
struct CostLayers {
    s: u64,
    layers: Vec<BTreeMap<Pos, (u64, Option<Pos>)>>,
}

impl CostLayers {
    fn run(env: &Environment, s: u64, a: Pos, t: u64, count_after: u64) -> Self {
        let d = env.d();
        let mut layers = vec![BTreeMap::from([(a, (0u64, None))])];
        for r in s + 1..=t {
            let slice = env.slice(r);
            let counted = r > count_after;
            let mut next: BTreeMap<Pos, (u64, Option<Pos>)> = BTreeMap::new();
            for (x, &(c, _)) in layers.last().expect("nonempty") {
                for y in neighbours(d, x) {
                    let cost = c + u64::from(counted && !slice.is_open(&y));
                    next.entry(y)
                        .and_modify(|v| {
                            if cost < v.0 {
                                *v = (cost, Some(*x));
                            }
                        })
                        .or_insert((cost, Some(*x)));
                }
            }
            layers.push(next);
        }
        CostLayers { s, layers }
    }

    fn cost(&self, y: &Pos) -> Option<u64> {
        self.layers.last().expect("nonempty").get(y).map(|v| v.0)
    }

    fn best_end(&self) -> (Pos, u64) {
        let (y, v) = self.layers.last().expect("nonempty").iter().min_by_key(|(_, v)| v.0).expect("nonempty");
        (*y, v.0)
    }

    fn path_to(&self, y: Pos) -> Path {
        let mut positions = vec![y];
        let mut cur = y;
        for layer in self.layers[1..].iter().rev() {
            cur = layer[&cur].1.expect("predecessor");
            positions.push(cur);
        }
        positions.reverse();
        Path { start: self.s, positions }
    }
}

/// `B^repair`: every path `π` of length `n` has a `π'` with
/// `H_n([b,sl,e]_{k-1,k+L}, π') <= H_n([b,e]_k, π)` and the same pinning as
/// [`check_a_repair`]. Decided per pinned pair `(a, b)` by comparing the
/// minimal slab energy with the smallest energy any `π` through the pair can have.
pub fn check_b_repair(b: &Environment, sl: &Environment, e: &Environment, scale: &ScaleParams, k: u64) -> Result<EventReport> {
    let (e1, e2) = repair_setup(b, sl, e, scale, k)?;
    let d = e1.d();
    let (n, big_l) = (scale.n, scale.slab_len);
    let p = scale.prefix_end(k);
    let s0 = k + scale.ell2();
    let void = scale.suffix_void(k);
    let mut report = EventReport::new("B_repair");
    report.suffix_void = void;
    let mut tails: HashMap<Pos, CostLayers> = HashMap::new();
    for a in cone(d, Pos::ORIGIN, p) {
        let prefix = straight_path(d, 0, Pos::ORIGIN, a, p);
        if void {
            let one = CostLayers::run(&e1, p, a, n, p);
            let two = CostLayers::run(&e2, p, a, n, p);
            let (y1, c1) = one.best_end();
            let (y2, c2) = two.best_end();
            let original = concat(&[&prefix, &one.path_to(y1)]);
            let repair = concat(&[&prefix, &two.path_to(y2)]);
            finish_b_pair(&mut report, &e1, &e2, original, repair, c2 > c1)?;
            if !report.holds {
                return Ok(report);
            }
            continue;
        }
        let one = CostLayers::run(&e1, p, a, s0, p);
        let two = CostLayers::run(&e2, p, a, s0 + big_l, p);
        for bb in cone(d, a, s0 - p) {
            let m1 = one.cost(&bb).expect("pair inside the cone");
            let mm = two.cost(&bb).expect("slab is longer than the gap");
            let tail = tails.entry(bb).or_insert_with(|| CostLayers::run(&e1, s0, bb, n, n - big_l));
            let (yt, ct) = tail.best_end();
            let tail_path = tail.path_to(yt);
            let original = concat(&[&prefix, &one.path_to(bb), &tail_path]);
            let suffix = Path { start: s0 + big_l, positions: tail_path.positions[..=(n - big_l - s0) as usize].to_vec() };
            let repair = concat(&[&prefix, &two.path_to(bb), &suffix]);
            finish_b_pair(&mut report, &e1, &e2, original, repair, mm > m1 + ct)?;
            if !report.holds {
                return Ok(report);
            }
        }
    }
    Ok(report)
}

fn finish_b_pair(report: &mut EventReport, e1: &Environment, e2: &Environment, original: Path, repair: Path, fails: bool) -> Result<()> {
    if fails {
        report.holds = false;
        report.counterexample = Some(original);
        return Ok(());
    }
    if report.repairs.len() < MAX_WITNESSES {
        let h1 = total_energy(e1, &original)?;
        let h2 = total_energy(e2, &repair)?;
        assert!(h2 <= h1, "repair witness raises the energy: {h2} > {h1}");
        push_repair(report, original, repair, h1, h2);
    } else {
        report.caps_hit = true;
    }
    Ok(())
}

/// Monte Carlo estimate of one martingale difference for a fixed base environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDiffSample {
    pub k: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub outer_samples: usize,
    pub seed: u64,
}

/// `Δ̂_k = mean over fresh (sl, e) of log Ñ_n([b,e]_k) - log Ñ_n([b,sl,e]_{k-1,k+L})`.
/// Replicate `i` uses the seeds `derive_seed(seed, "slab", i)` and
/// `derive_seed(seed, "end", i)`; fresh slices follow the law of `b` at time `k`.
pub fn martingale_diff_estimate(
    b: &Environment,
    scale: &ScaleParams,
    k: u64,
    outer_samples: usize,
    seed: u64,
) -> Result<MartingaleDiffSample> {
    scale.validate()?;
    let l2 = scale.ell2();
    if k < l2 + 1 || k > scale.n {
        return invalid(format!("martingale difference needs ell^2+1 <= k <= n, got k={k}, {scale:?}"));
    }
    if outer_samples == 0 {
        return invalid("martingale difference needs at least one outer sample");
    }
    let p = b.law_at(k).ok_or_else(|| Error::InvalidArgument(format!("base environment has no Bernoulli law at time {k}")))?;
    let d = b.d();
    let diffs: Result<Vec<f64>> = (0..outer_samples)
        .into_par_iter()
        .map(|i| {
            let sl = Environment::from_seed(derive_seed(seed, "slab", i as u64), d, p)?;
            let e = Environment::from_seed(derive_seed(seed, "end", i as u64), d, p)?;
            let plain = Environment::splice(b, &e, k)?;
            let slabbed = Environment::splice_slab(b, &sl, &e, k - 1, k + scale.slab_len)?;
            Ok(regularized_log(&plain, ExtendedBeta::Infinite, scale.n)? - regularized_log(&slabbed, ExtendedBeta::Infinite, scale.n)?)
        })
        .collect();
    let m = Moments::from_slice(&diffs?);
    Ok(MartingaleDiffSample { k, estimate: m.mean, stderr: m.stderr(), outer_samples, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MarginConfig {
        MarginConfig { inner_samples: 16, horizon_extra: 40, ..MarginConfig::default() }
    }

    #[test]
    fn default_scale_follows_log_squared() {
        let s = ScaleParams::new(64);
        assert_eq!(s.ell, 17);
        assert_eq!(s.slab_len, 17u64.pow(4));
        assert_eq!(ScaleParams::with_ell(12, 1).prefix_end(6), 3);
        assert!(ScaleParams::with_ell(12, 1).with_slab(2).suffix_void(10));
        assert!(!ScaleParams::with_ell(12, 1).with_slab(2).suffix_void(6));
    }

    #[test]
    fn everything_holds_when_all_open() {
        let env = Environment::from_seed(1, 1, 1.0).unwrap();
        let scale = ScaleParams::with_ell(16, 2);
        assert!(check_a_conn(&env, &scale, 6, &cfg()).unwrap().holds);
        assert!(check_a_bar(&env, &scale, 4, &cfg()).unwrap().holds);
        assert!(check_b_conn(&env, &scale, 9, &cfg()).unwrap().holds);
        assert!(check_b_bar(&env, &scale, 4, &cfg()).unwrap().holds);
        let small = ScaleParams::with_ell(10, 1).with_slab(2);
        let r = check_a_repair(&env, &env, &env, &small, 5).unwrap();
        assert!(r.holds && !r.repairs.is_empty());
        let r = check_b_repair(&env, &env, &env, &small, 5).unwrap();
        assert!(r.holds && r.repairs.iter().all(|w| w.original_energy == 0 && w.repair_energy == 0));
    }

    #[test]
    fn vacuous_cases() {
        let env = Environment::from_seed(2, 1, 0.7).unwrap().with_slice(1, false);
        let scale = ScaleParams::with_ell(16, 2);
        assert!(check_a_conn(&env, &scale, 6, &cfg()).unwrap().holds);
        let cut = Environment::from_seed(2, 1, 0.7).unwrap().with_slice(6, false);
        assert!(check_a_bar(&cut, &scale, 4, &cfg()).unwrap().holds);
    }

    #[test]
    fn closed_slab_breaks_repair() {
        let open = Environment::all_open(1);
        let closed = Environment::all_closed(1);
        let scale = ScaleParams::with_ell(12, 1).with_slab(2);
        let r = check_a_repair(&open, &closed, &open, &scale, 6).unwrap();
        assert!(!r.holds && r.counterexample.is_some());
    }

    #[test]
    fn trivial_martingale_differences() {
        let scale = ScaleParams::with_ell(20, 2);
        let open = Environment::from_seed(5, 1, 1.0).unwrap();
        let s = martingale_diff_estimate(&open, &scale, 8, 4, 1).unwrap();
        assert_eq!((s.estimate, s.stderr), (0.0, 0.0));
        let cut = Environment::from_seed(5, 1, 0.8).unwrap().with_slice(1, false);
        let s = martingale_diff_estimate(&cut, &scale.with_slab(3), 8, 4, 1).unwrap();
        assert_eq!(s.estimate, 0.0);
    }
}
