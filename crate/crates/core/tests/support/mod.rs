//! Slow reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use percolymer::events::{EventReport, ScaleParams};
use percolymer::{Environment, ExtendedBeta, LatticePoint, Path, Pos};

fn open(env: &Environment, t: u64, x: Pos) -> bool {
    env.is_open(&LatticePoint::new(t, x)).unwrap()
}

fn moves(d: usize) -> Vec<Pos> {
    let mut v = vec![Pos::ORIGIN];
    for i in 0..d {
        let mut e = [0i64; 3];
        e[i] = 1;
        v.push(Pos(e));
        e[i] = -1;
        v.push(Pos(e));
    }
    v
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Z_n^β` by a hash-map log-sum-exp recursion, plus whether any open path
/// of length `n` exists.
pub fn naive_log_partition(env: &Environment, beta: ExtendedBeta, n: u64) -> (bool, f64) {
    let d = env.d();
    let mut layer: HashMap<Pos, (f64, bool)> = HashMap::from([(Pos::ORIGIN, (0.0, true))]);
    for t in 1..=n {
        let mut next: HashMap<Pos, (f64, bool)> = HashMap::new();
        for (x, &(w, reach)) in &layer {
            for m in moves(d) {
                let y = *x + m;
                let is_open = open(env, t, y);
                let step = match (is_open, beta) {
                    (true, _) => 0.0,
                    (false, ExtendedBeta::Infinite) => f64::NEG_INFINITY,
                    (false, ExtendedBeta::Finite(b)) => -b,
                };
                let e = next.entry(y).or_insert((f64::NEG_INFINITY, false));
                e.0 = log_add(e.0, w + step);
                e.1 |= reach && is_open;
            }
        }
        layer = next;
    }
    let total = layer.values().fold(f64::NEG_INFINITY, |acc, v| log_add(acc, v.0));
    (layer.values().any(|v| v.1), total)
}

/// Open-cluster layers by breadth-first search over hash sets.
pub fn bfs_reach(env: &Environment, s: u64, sources: &[Pos], t: u64) -> HashSet<Pos> {
    let d = env.d();
    let mut cur: HashSet<Pos> = sources.iter().copied().collect();
    for r in s + 1..=t {
        cur = cur.iter().flat_map(|x| moves(d).into_iter().map(move |m| *x + m)).filter(|y| open(env, r, *y)).collect();
    }
    cur
}

pub fn bfs_survives(env: &Environment, t: u64) -> bool {
    !bfs_reach(env, 0, &[Pos::ORIGIN], t).is_empty()
}

/// Forward coupled zone decided by set arithmetic.
pub fn naive_coupled_zone(env: &Environment, n: u64, x: Pos, k: u64, v: f64) -> bool {
    let d = env.d();
    let w = (k as f64 * v + 1e-9).floor() as i64;
    let from_x = bfs_reach(env, n, &[x], n + k);
    if from_x.is_empty() {
        return false;
    }
    let r = 2 * k as i64;
    let mut box_sources = Vec::new();
    for a in -r..=r {
        for b in if d > 1 { -r..=r } else { 0..=0 } {
            for c in if d > 2 { -r..=r } else { 0..=0 } {
                box_sources.push(x + Pos([a, b, c]));
            }
        }
    }
    let from_all = bfs_reach(env, n, &box_sources, n + k);
    from_all.iter().all(|y| (*y - x).linf() > w || from_x.contains(y))
}

/// The two spliced environments of a repair event, read site by site.
pub struct RepairPair<'a> {
    pub b: &'a Environment,
    pub sl: &'a Environment,
    pub e: &'a Environment,
    pub k: u64,
    pub slab: u64,
}

impl RepairPair<'_> {
    pub fn open1(&self, t: u64, x: Pos) -> bool {
        if t <= self.k {
            open(self.b, t, x)
        } else {
            open(self.e, t - self.k, x)
        }
    }

    pub fn open2(&self, t: u64, x: Pos) -> bool {
        if t < self.k {
            open(self.b, t, x)
        } else if t <= self.k + self.slab {
            open(self.sl, t - (self.k - 1), x)
        } else {
            open(self.e, t - self.k - self.slab, x)
        }
    }

    pub fn energy1(&self, xs: &[Pos]) -> u64 {
        (1..xs.len()).filter(|&t| !self.open1(t as u64, xs[t])).count() as u64
    }

    pub fn energy2(&self, xs: &[Pos]) -> u64 {
        (1..xs.len()).filter(|&t| !self.open2(t as u64, xs[t])).count() as u64
    }
}

fn pack(parts: &[Pos]) -> u128 {
    parts.iter().fold(1u128, |acc, p| (acc << 6) | (p.0[0] + 31) as u128)
}

fn for_each_line_path(n: usize, mut f: impl FnMut(&[Pos])) {
    let total = 3usize.pow(n as u32);
    let mut xs = vec![Pos::ORIGIN; n + 1];
    for code in 0..total {
        let mut c = code;
        for t in 1..=n {
            xs[t] = xs[t - 1] + Pos::line((c % 3) as i64 - 1);
            c /= 3;
        }
        f(&xs);
    }
}

/// Decides `A^repair` and `B^repair` on the line by listing every path twice.
/// Returns `(a_holds, b_holds)`.
pub fn repair_by_enumeration(pair: &RepairPair<'_>, scale: &ScaleParams) -> (bool, bool) {
    assert_eq!(pair.b.d(), 1);
    let n = scale.n as usize;
    let ell2 = (scale.ell * scale.ell) as usize;
    let big_l = scale.slab_len as usize;
    let k = pair.k as usize;
    let pre = (k as i64 - 1 - 2 * ell2 as i64).max(0) as usize;
    let s0 = k + ell2;
    let void = s0 + big_l > n;
    let sig1 = |xs: &[Pos]| {
        let mut v = xs[..=pre].to_vec();
        if !void {
            v.extend_from_slice(&xs[s0..=n - big_l]);
        }
        pack(&v)
    };
    let sig2 = |xs: &[Pos]| {
        let mut v = xs[..=pre].to_vec();
        if !void {
            v.extend_from_slice(&xs[s0 + big_l..=n]);
        }
        pack(&v)
    };
    let mut best2: HashMap<u128, u64> = HashMap::new();
    for_each_line_path(n, |xs| {
        let h = pair.energy2(xs);
        let e = best2.entry(sig2(xs)).or_insert(u64::MAX);
        *e = (*e).min(h);
    });
    let (mut a_holds, mut b_holds) = (true, true);
    for_each_line_path(n, |xs| {
        let h = pair.energy1(xs);
        let best = best2.get(&sig1(xs)).copied().unwrap_or(u64::MAX);
        if h == 0 && best != 0 {
            a_holds = false;
        }
        if best > h {
            b_holds = false;
        }
    });
    (a_holds, b_holds)
}

fn valid_steps(xs: &[Pos]) -> bool {
    xs.windows(2).all(|w| w[0].l1_dist(&w[1]) <= 1)
}

/// Re-checks every witness of a repair report against its definition.
/// `open_witness` selects the `A^repair` conditions, otherwise the energy ones.
pub fn verify_witnesses(report: &EventReport, pair: &RepairPair<'_>, scale: &ScaleParams, open_witness: bool) -> Result<(), String> {
    let n = scale.n as usize;
    let ell2 = (scale.ell * scale.ell) as usize;
    let big_l = scale.slab_len as usize;
    let k = pair.k as usize;
    let pre = (k as i64 - 1 - 2 * ell2 as i64).max(0) as usize;
    let s0 = k + ell2;
    let void = s0 + big_l > n;
    let check = |p: &Path| p.start == 0 && p.positions.len() == n + 1 && p.positions[0] == Pos::ORIGIN && valid_steps(&p.positions);
    for w in &report.repairs {
        let (o, r) = (&w.original.positions, &w.repair.positions);
        if !check(&w.original) || !check(&w.repair) {
            return Err(format!("malformed witness {w:?}"));
        }
        if o[..=pre] != r[..=pre] {
            return Err(format!("prefix differs before {pre}: {w:?}"));
        }
        if !void && (s0..=n - big_l).any(|j| r[j + big_l] != o[j]) {
            return Err(format!("suffix not pinned: {w:?}"));
        }
        let (h1, h2) = (pair.energy1(o), pair.energy2(r));
        if open_witness && (h1 != 0 || h2 != 0) {
            return Err(format!("witness not open: energies {h1}, {h2}"));
        }
        if !open_witness && (h1 != w.original_energy || h2 != w.repair_energy || h2 > h1) {
            return Err(format!("energy witness wrong: recomputed {h1}, {h2}, stated {}, {}", w.original_energy, w.repair_energy));
        }
    }
    if let Some(c) = &report.counterexample {
        if !check(c) {
            return Err(format!("malformed counterexample {c:?}"));
        }
        if open_witness && pair.energy1(&c.positions) != 0 {
            return Err("counterexample is not an open path".into());
        }
    }
    Ok(())
}
