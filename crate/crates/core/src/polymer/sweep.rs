//! Floating-point transfer-slice recursion
//! `W_{t+1}(y) = factor(t+1, y) · Σ_{|x-y|₁ ≤ 1} W_t(x)` over the ℓ₁ cone.
//!
//! Several inverse temperatures share one pass over the environment. Each
//! channel is kept as mantissas times `2^exp2`; the slice is rescaled by an exact
//! power of two whenever its maximum drifts outside `[2^-256, 2^256]`, so nothing
//! overflows and the scaling adds no rounding. A separate flag array tracks
//! which sites are reached by open paths, so connectivity never depends on
//! floating-point range.

use std::f64::consts::LN_2;

use crate::env::Environment;
use crate::error::{invalid, Error, Result};
use crate::lattice::{log_branching, Cube, LatticePoint, Pos};

use super::ExtendedBeta;

/// Default limit on cell updates per call.
pub const DEFAULT_CELL_CAP: u128 = 100_000_000;

const HIGH: f64 = 1.157_920_892_373_162e77; // 2^256
const LOW: f64 = 8.636_168_555_094_445e-78; // 2^-256

/// Endpoints summed over at the final slice.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    All,
    Set(&'a [Pos]),
}

/// A nonnegative number `mantissa · 2^exp2` with `mantissa ∈ [1, 2)` or zero.
/// Comparisons are exact, which the log values alone cannot guarantee.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledReal {
    pub mantissa: f64,
    pub exp2: i64,
}

impl ScaledReal {
    pub const ZERO: ScaledReal = ScaledReal { mantissa: 0.0, exp2: 0 };
    pub const ONE: ScaledReal = ScaledReal { mantissa: 1.0, exp2: 0 };

    /// Normalises `v · 2^e` for a finite, nonnegative, normal or zero `v`.
    pub fn new(v: f64, e: i64) -> Self {
        if v == 0.0 {
            return Self::ZERO;
        }
        let ex = ((v.to_bits() >> 52) & 0x7ff) as i64 - 1023;
        ScaledReal { mantissa: v * 2f64.powi(-ex as i32), exp2: e + ex }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == 0.0
    }

    pub fn ln(&self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            self.mantissa.ln() + self.exp2 as f64 * LN_2
        }
    }
}

impl PartialOrd for ScaledReal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match (self.is_zero(), other.is_zero()) {
            (true, true) => Some(std::cmp::Ordering::Equal),
            (true, false) => Some(std::cmp::Ordering::Less),
            (false, true) => Some(std::cmp::Ordering::Greater),
            _ => Some(self.exp2.cmp(&other.exp2).then(self.mantissa.partial_cmp(&other.mantissa)?)),
        }
    }
}

/// Totals recorded after `t` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub t: u64,
    pub connected: bool,
    pub log_z: Vec<f64>,
    pub totals: Vec<ScaledReal>,
}

/// Rounding can push a log-count a hair above its bound `steps·log(2d+1)`.
fn clamp_log(d: usize, steps: u64, v: f64, endpoints: usize) -> f64 {
    v.min(steps as f64 * log_branching(d) + (endpoints.max(1) as f64).ln())
}

/// Number of sites with `|y|₁ <= j` in dimension `d`.
pub(crate) fn ball_size(d: usize, j: u128) -> u128 {
    match d {
        1 => 2 * j + 1,
        2 => 2 * j * j + 2 * j + 1,
        _ => (2 * j + 1) * (2 * j * j + 2 * j + 3) / 3,
    }
}

/// Cell updates needed for `n` steps in dimension `d`.
pub(crate) fn cone_work(d: usize, n: u64) -> u128 {
    (1..=n as u128).map(|j| ball_size(d, j)).sum()
}

/// A multi-temperature forward recursion from one start point.
#[derive(Clone, Debug)]
pub struct Sweep<'a> {
    env: &'a Environment,
    start: LatticePoint,
    betas: Vec<ExtendedBeta>,
    cap: u128,
}

/// The weights of the last computed slice.
#[derive(Clone, Debug)]
pub struct SweepState {
    cube: Cube,
    steps: u64,
    channels: usize,
    values: Vec<f64>,
    exp2: Vec<i64>,
    reach: Vec<u8>,
    /// Channels whose total is exactly `(2d+1)^steps`: β = 0, or every slice open.
    free: Vec<bool>,
}

impl SweepState {
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Whether any open path from the start reaches this slice.
    pub fn connected(&self) -> bool {
        self.reach.iter().any(|&r| r != 0)
    }

    pub fn reached(&self, y: &Pos) -> bool {
        self.cube.index(y).is_some_and(|i| self.reach[i] != 0)
    }

    fn clamp(&self, v: f64, endpoints: usize) -> f64 {
        clamp_log(self.cube.d, self.steps, v, endpoints)
    }

    /// `Σ_y W(y)` for channel `c`.
    pub fn total(&self, c: usize) -> ScaledReal {
        let s: f64 = self.values.iter().skip(c).step_by(self.channels).sum();
        ScaledReal::new(s, self.exp2[c])
    }

    /// `log Σ_y W(y)` for channel `c` over all endpoints; `-∞` when empty.
    pub fn log_total(&self, c: usize) -> f64 {
        if self.free[c] {
            return self.steps as f64 * log_branching(self.cube.d);
        }
        self.clamp(self.total(c).ln(), 1)
    }

    /// `log W(y)` for channel `c`.
    pub fn log_at(&self, c: usize, y: &Pos) -> f64 {
        match self.cube.index(y) {
            Some(i) if self.values[i * self.channels + c] > 0.0 => self.values[i * self.channels + c].ln() + self.exp2[c] as f64 * LN_2,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn log_sum(&self, c: usize, targets: Targets<'_>) -> f64 {
        match targets {
            Targets::All => self.log_total(c),
            Targets::Set(ys) => {
                let mut seen = std::collections::BTreeSet::new();
                let s: f64 = ys
                    .iter()
                    .filter(|y| seen.insert(**y))
                    .filter_map(|y| self.cube.index(y))
                    .map(|i| self.values[i * self.channels + c])
                    .sum();
                if s == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    self.clamp(s.ln() + self.exp2[c] as f64 * LN_2, seen.len())
                }
            }
        }
    }
}

impl<'a> Sweep<'a> {
    pub fn new(env: &'a Environment, start: LatticePoint, betas: &[ExtendedBeta]) -> Self {
        Sweep { env, start, betas: betas.to_vec(), cap: DEFAULT_CELL_CAP }
    }

    pub fn with_cap(mut self, cap: u128) -> Self {
        self.cap = cap;
        self
    }

    /// Runs `n` steps, recording totals after each step listed in `checkpoints`.
    pub fn run(&self, n: u64, checkpoints: &[u64]) -> Result<(Vec<Checkpoint>, SweepState)> {
        let d = self.env.d();
        let channels = self.betas.len();
        if channels == 0 {
            return invalid("sweep needs at least one inverse temperature");
        }
        let work = cone_work(d, n).max(1) * channels as u128;
        if work > self.cap {
            return Err(Error::ResourceCap { what: "slice cell updates", needed: work, cap: self.cap });
        }
        let x0 = self.start.x;
        let radius = n as i64 + 1;
        self.env.check_window(self.start.t + n, &x0, n as i64)?;
        let cube = Cube::new(d, x0, radius);
        let strides = cube.strides();
        let len = cube.len();
        let closed: Vec<f64> = self.betas.iter().map(|b| b.closed_factor()).collect();

        let mut cur = vec![0.0f64; len * channels];
        let mut next = vec![0.0f64; len * channels];
        let mut reach = vec![0u8; len];
        let mut reach_next = vec![0u8; len];
        let mut exp2 = vec![0i64; channels];
        let origin = cube.index(&x0).expect("start inside its own cube");
        cur[origin * channels..(origin + 1) * channels].fill(1.0);
        reach[origin] = 1;

        let mut out = Vec::new();
        let mut state_steps = 0;
        let mut sums = vec![0.0f64; channels];
        let mut maxes = vec![0.0f64; channels];
        let mut rows: Vec<(usize, Pos, i64)> = Vec::new();
        let mut all_open = true;
        if checkpoints.contains(&0) {
            out.push(Checkpoint { t: 0, connected: true, log_z: vec![0.0; channels], totals: vec![ScaledReal::ONE; channels] });
        }

        for j in 1..=n {
            let slice = self.env.slice(self.start.t + j);
            let constant = slice.constant();
            all_open &= constant == Some(true);
            cone_rows(&cube, j as i64, &mut rows);
            maxes.iter_mut().for_each(|m| *m = 0.0);
            for &(base, prefix, half) in &rows {
                for off in 0..=(2 * half) as usize {
                    let idx = base + off;
                    let mut r = reach[idx];
                    let mut any = false;
                    for c in 0..channels {
                        sums[c] = cur[idx * channels + c];
                    }
                    for &s in &strides[..d] {
                        r |= reach[idx - s] | reach[idx + s];
                        for c in 0..channels {
                            sums[c] += cur[(idx - s) * channels + c] + cur[(idx + s) * channels + c];
                        }
                    }
                    for &v in sums.iter() {
                        any |= v != 0.0;
                    }
                    let cell = &mut next[idx * channels..(idx + 1) * channels];
                    if !any && r == 0 {
                        cell.fill(0.0);
                        reach_next[idx] = 0;
                        continue;
                    }
                    let open = match constant {
                        Some(b) => b,
                        None => {
                            let mut y = prefix;
                            y.0[d - 1] += off as i64;
                            slice.is_open(&y)
                        }
                    };
                    reach_next[idx] = u8::from(open && r != 0);
                    for c in 0..channels {
                        let v = if open { sums[c] } else { sums[c] * closed[c] };
                        cell[c] = v;
                        if v > maxes[c] {
                            maxes[c] = v;
                        }
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            std::mem::swap(&mut reach, &mut reach_next);
            for c in 0..channels {
                let m = maxes[c];
                if m > HIGH || (m > 0.0 && m < LOW) {
                    let e = m.log2().floor() as i32;
                    let scale = 2f64.powi(-e);
                    for &(base, _, half) in &rows {
                        for idx in base..=base + (2 * half) as usize {
                            cur[idx * channels + c] *= scale;
                        }
                    }
                    exp2[c] += e as i64;
                }
            }
            state_steps = j;
            if checkpoints.contains(&j) {
                let connected = reach.iter().any(|&r| r != 0);
                let totals: Vec<ScaledReal> =
                    (0..channels).map(|c| ScaledReal::new(cur.iter().skip(c).step_by(channels).sum(), exp2[c])).collect();
                let log_z = totals
                    .iter()
                    .zip(&closed)
                    .map(|(z, &f)| if f == 1.0 || all_open { j as f64 * log_branching(d) } else { clamp_log(d, j, z.ln(), 1) })
                    .collect();
                out.push(Checkpoint { t: j, connected, log_z, totals });
            }
            if reach.iter().all(|&r| r == 0) && maxes.iter().all(|&m| m == 0.0) {
                for t in checkpoints.iter().copied().filter(|&t| t > j && t <= n) {
                    out.push(Checkpoint {
                        t,
                        connected: false,
                        log_z: vec![f64::NEG_INFINITY; channels],
                        totals: vec![ScaledReal::ZERO; channels],
                    });
                }
                state_steps = n;
                break;
            }
        }
        out.sort_by_key(|c| c.t);
        out.dedup_by_key(|c| c.t);
        let free = closed.iter().map(|&f| f == 1.0 || all_open).collect();
        let state = SweepState { cube, steps: state_steps, channels, values: cur, exp2, reach, free };
        if state.connected() {
            for (c, b) in self.betas.iter().enumerate() {
                if b.is_infinite() && state.log_total(c) == f64::NEG_INFINITY {
                    return Err(Error::ResourceCap { what: "floating-point range of open-path counts", needed: 0, cap: 0 });
                }
            }
        }
        Ok((out, state))
    }
}

/// Rows of the ℓ₁ ball of radius `j` around the cube centre, as
/// `(first index, first position, half length)` along the last axis.
fn cone_rows(cube: &Cube, j: i64, rows: &mut Vec<(usize, Pos, i64)>) {
    rows.clear();
    let d = cube.d;
    let c = cube.center;
    let mut push = |prefix: [i64; 2], used: i64| {
        let half = j - used;
        let mut p = c;
        for (i, v) in prefix.iter().enumerate().take(d - 1) {
            p.0[i] += v;
        }
        p.0[d - 1] -= half;
        rows.push((cube.index(&p).expect("cone inside cube"), p, half));
    };
    match d {
        1 => push([0, 0], 0),
        2 => {
            for a in -j..=j {
                push([a, 0], a.abs());
            }
        }
        _ => {
            for a in -j..=j {
                let ra = j - a.abs();
                for b in -ra..=ra {
                    push([a, b], a.abs() + b.abs());
                }
            }
        }
    }
}

/// `log Z_n^β` from `start`; `-∞` exactly when `Z = 0`, which needs β = ∞.
pub fn partition_log(env: &Environment, beta: ExtendedBeta, n: u64, start: LatticePoint) -> Result<f64> {
    let (_, state) = Sweep::new(env, start, &[beta]).run(n, &[])?;
    Ok(state.log_total(0))
}

/// `log Σ_π e^{-β H_{(m,n]}(π)}` over paths from `(m, x)` to `(n, targets)`.
pub fn restricted_partition_log(env: &Environment, beta: ExtendedBeta, m: u64, x: Pos, n: u64, targets: Targets<'_>) -> Result<f64> {
    if m > n {
        return invalid(format!("restricted partition function needs m <= n, got {m} > {n}"));
    }
    let (_, state) = Sweep::new(env, LatticePoint::new(m, x), &[beta]).run(n - m, &[])?;
    Ok(state.log_sum(0, targets))
}

/// `log Z_n^β` on `{(0,0) ↔ (n, Z^d)}` and 0 otherwise.
pub fn regularized_log(env: &Environment, beta: ExtendedBeta, n: u64) -> Result<f64> {
    let (_, state) = Sweep::new(env, LatticePoint::origin(), &[beta]).run(n, &[])?;
    Ok(if state.connected() { state.log_total(0) } else { 0.0 })
}
