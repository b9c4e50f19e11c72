//! Exact open-path counts with arbitrary-precision integers.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::{Cube, LatticePoint, Pos};

/// Default limit on big-integer cell updates per call.
pub const DEFAULT_EXACT_CAP: u128 = 20_000_000;

/// Exact weights of one slice: `N_{s,x0; t,y}` for every `y` of a box.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactSlice {
    pub t: u64,
    cube: Cube,
    values: Vec<BigUint>,
}

impl ExactSlice {
    pub fn get(&self, y: &Pos) -> BigUint {
        self.cube.index(y).map(|i| self.values[i].clone()).unwrap_or_default()
    }

    pub fn total(&self) -> BigUint {
        self.values.iter().sum()
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    /// Nonzero entries in lexicographic order.
    pub fn support(&self) -> Vec<(Pos, BigUint)> {
        self.values.iter().enumerate().filter(|(_, v)| !v.is_zero()).map(|(i, v)| (self.cube.pos(i), v.clone())).collect()
    }
}

fn check_cap(needed: u128, cap: u128) -> Result<()> {
    if needed > cap {
        return Err(Error::ResourceCap { what: "exact cell updates", needed, cap });
    }
    Ok(())
}

/// Open-path counts from `start` to every endpoint after `n` steps.
pub fn endpoint_counts(env: &Environment, start: LatticePoint, n: u64) -> Result<ExactSlice> {
    endpoint_counts_capped(env, start, n, DEFAULT_EXACT_CAP)
}

pub fn endpoint_counts_capped(env: &Environment, start: LatticePoint, n: u64, cap: u128) -> Result<ExactSlice> {
    let d = env.d();
    let cube = Cube::new(d, start.x, n as i64 + 1);
    check_cap(n as u128 * cube.len() as u128, cap)?;
    env.check_window(start.t + n, &start.x, n as i64)?;
    let strides = cube.strides();
    let mut cur = vec![BigUint::zero(); cube.len()];
    cur[cube.index(&start.x).expect("start in cube")] = BigUint::one();
    let mut next = cur.clone();
    for j in 1..=n {
        let slice = env.slice(start.t + j);
        for (idx, cell) in next.iter_mut().enumerate() {
            let y = cube.pos(idx);
            if y.l1_dist(&start.x) > j as i64 || !slice.is_open(&y) {
                cell.set_zero();
                continue;
            }
            let mut s = cur[idx].clone();
            for &st in &strides[..d] {
                s += &cur[idx - st];
                s += &cur[idx + st];
            }
            *cell = s;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let inner = Cube::new(d, start.x, n as i64);
    let values = inner.positions().map(|y| cur[cube.index(&y).expect("inner box")].clone()).collect();
    Ok(ExactSlice { t: start.t + n, cube: inner, values })
}

/// Exact `N_n`, the number of open paths of length `n` from `start`.
pub fn count_paths_exact(env: &Environment, n: u64, start: LatticePoint) -> Result<BigUint> {
    Ok(endpoint_counts(env, start, n)?.total())
}

/// `N_{s,x; h, Z^d}` for every `x` within ℓ∞ distance `radius` of `center`.
pub fn outgoing_counts(env: &Environment, s: u64, center: Pos, radius: i64, horizon: u64) -> Result<ExactSlice> {
    let d = env.d();
    let span = horizon.saturating_sub(s) as i64;
    let big = Cube::new(d, center, radius + span + 1);
    check_cap(span as u128 * big.len() as u128, DEFAULT_EXACT_CAP)?;
    env.check_window(horizon, &center, radius + span)?;
    let strides = big.strides();
    let mut cur = vec![BigUint::one(); big.len()];
    let mut next = cur.clone();
    for r in (s..horizon).rev() {
        let slice = env.slice(r + 1);
        let open: Vec<bool> = (0..big.len()).map(|i| slice.is_open(&big.pos(i))).collect();
        let valid = radius + (r - s) as i64;
        for (idx, cell) in next.iter_mut().enumerate() {
            let x = big.pos(idx);
            if x.linf_dist(&center) > valid {
                cell.set_zero();
                continue;
            }
            let mut acc = if open[idx] { cur[idx].clone() } else { BigUint::zero() };
            for &st in &strides[..d] {
                for j in [idx - st, idx + st] {
                    if open[j] {
                        acc += &cur[j];
                    }
                }
            }
            *cell = acc;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let inner = Cube::new(d, center, radius);
    let values = inner.positions().map(|y| cur[big.index(&y).expect("inner box")].clone()).collect();
    Ok(ExactSlice { t: s, cube: inner, values })
}

/// `x*`: the endpoint at time `m` with the most open paths from `(0, 0)`,
/// smallest in lexicographic order on ties.
pub fn argmax_endpoint(env: &Environment, m: u64) -> Result<Pos> {
    let counts = endpoint_counts(env, LatticePoint::origin(), m)?;
    let mut best: Option<(Pos, BigUint)> = None;
    for (y, v) in counts.support() {
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((y, v));
        }
    }
    best.map(|(y, _)| y).ok_or(Error::Disconnected { t: m })
}

/// `x**` with its two factors `N_{0,0; n,x}` and `N_{n,x; 2n, Z^d}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Midpoint {
    pub x: Pos,
    pub incoming: BigUint,
    pub outgoing: BigUint,
    /// Every product was zero; `x` is then the lexicographically smallest candidate.
    pub all_zero: bool,
}

/// Maximiser of `N_{0,0; n,x} · N_{n,x; 2n,Z^d}` over `|x|₁ <= n`, lexicographic ties.
pub fn argmax_midpoint(env: &Environment, n: u64) -> Result<Midpoint> {
    let incoming = endpoint_counts(env, LatticePoint::origin(), n)?;
    let outgoing = outgoing_counts(env, n, Pos::ORIGIN, n as i64, 2 * n)?;
    let mut best: Option<(Pos, BigUint)> = None;
    let mut first = None;
    for x in incoming.cube().positions().filter(|x| x.l1() <= n as i64) {
        first.get_or_insert(x);
        let prod = incoming.get(&x) * outgoing.get(&x);
        if best.as_ref().is_none_or(|(_, b)| prod > *b) {
            best = Some((x, prod));
        }
    }
    let (x, prod) = best.expect("the cone is never empty");
    let x = if prod.is_zero() { first.expect("nonempty cone") } else { x };
    Ok(Midpoint { x, incoming: incoming.get(&x), outgoing: outgoing.get(&x), all_zero: prod.is_zero() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trinomial_rows() {
        let env = Environment::all_open(1);
        assert_eq!(count_paths_exact(&env, 3, LatticePoint::origin()).unwrap(), BigUint::from(27u32));
        let row = endpoint_counts(&env, LatticePoint::origin(), 2).unwrap();
        let v: Vec<u32> = (-2..=2).map(|x| row.get(&Pos::line(x)).try_into().unwrap()).collect();
        assert_eq!(v, vec![1, 2, 3, 2, 1]);
        assert_eq!(argmax_endpoint(&env, 7).unwrap(), Pos::ORIGIN);
        let mid = argmax_midpoint(&env, 3).unwrap();
        assert_eq!(mid.x, Pos::ORIGIN);
        assert_eq!(mid.outgoing, BigUint::from(27u32));
        assert!(!mid.all_zero);
    }

    #[test]
    fn closed_first_slice_kills_everything() {
        let env = Environment::all_open(2).with_slice(1, false);
        assert!(count_paths_exact(&env, 4, LatticePoint::origin()).unwrap().is_zero());
        assert_eq!(argmax_endpoint(&env, 4), Err(Error::Disconnected { t: 4 }));
        let mid = argmax_midpoint(&env, 2).unwrap();
        assert!(mid.all_zero);
        assert_eq!(mid.x, Pos::new(&[-2, 0]));
    }

    #[test]
    fn diagonal_corridor() {
        let env = Environment::custom(1, |t, x| x.0[0] == t as i64);
        assert_eq!(argmax_endpoint(&env, 6).unwrap(), Pos::line(6));
        let line = Environment::custom(1, |_, x| x.0[0] == 0);
        assert_eq!(argmax_midpoint(&line, 5).unwrap().x, Pos::ORIGIN);
    }
}
