//! Brute-force path enumeration, the reference every recursion is tested against.

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::{unit_steps, LatticePoint, Pos};

use super::{ExtendedBeta, Path};

/// Largest number of paths `(2d+1)^n` the oracle will walk.
pub const DEFAULT_ORACLE_CAP: u128 = 1_000_000;

/// Everything the oracle learned about paths of one length.
#[derive(Clone, Debug)]
pub struct Enumeration {
    /// `Σ_π e^{-β H(π)}`.
    pub value: f64,
    /// `histogram[h]` = number of paths with energy `h`.
    pub histogram: Vec<u128>,
    pub paths: Vec<(Path, u64)>,
}

impl Enumeration {
    pub fn open_count(&self) -> u128 {
        self.histogram[0]
    }

    pub fn log_value(&self) -> f64 {
        self.value.ln()
    }
}

fn check_cap(d: usize, n: u64, cap: u128) -> Result<()> {
    let needed = ((2 * d + 1) as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if needed > cap {
        return Err(Error::ResourceCap { what: "enumerated paths", needed, cap });
    }
    Ok(())
}

/// Calls `f` with every path of length `n` from `start` in depth-first order.
pub fn for_each_path(d: usize, start: Pos, n: u64, mut f: impl FnMut(&[Pos])) {
    let steps = unit_steps(d);
    let mut path = vec![start];
    let mut choice = vec![0usize];
    if n == 0 {
        f(&path);
        return;
    }
    loop {
        let depth = path.len() - 1;
        if depth as u64 == n {
            f(&path);
            path.pop();
            choice.pop();
        } else if choice[depth] < steps.len() {
            let next = path[depth] + steps[choice[depth]];
            choice[depth] += 1;
            path.push(next);
            choice.push(0);
            continue;
        } else {
            path.pop();
            choice.pop();
        }
        if path.is_empty() {
            return;
        }
    }
}

/// Exact partition sum by listing all `(2d+1)^n` paths from `start`.
pub fn enumerate_paths(env: &Environment, beta: ExtendedBeta, n: u64, start: LatticePoint) -> Result<Enumeration> {
    enumerate_paths_capped(env, beta, n, start, DEFAULT_ORACLE_CAP)
}

pub fn enumerate_paths_capped(env: &Environment, beta: ExtendedBeta, n: u64, start: LatticePoint, cap: u128) -> Result<Enumeration> {
    let d = env.d();
    check_cap(d, n, cap)?;
    let mut histogram = vec![0u128; n as usize + 1];
    let mut paths = Vec::new();
    let mut failure = None;
    for_each_path(d, start.x, n, |ps| {
        let mut h = 0u64;
        for (i, x) in ps.iter().enumerate().skip(1) {
            match env.is_open(&LatticePoint::new(start.t + i as u64, *x)) {
                Ok(true) => {}
                Ok(false) => h += 1,
                Err(e) => failure = Some(e),
            }
        }
        histogram[h as usize] += 1;
        paths.push((Path { start: start.t, positions: ps.to_vec() }, h));
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let value = histogram.iter().enumerate().map(|(h, &c)| c as f64 * beta.weight(h as u64)).sum();
    Ok(Enumeration { value, histogram, paths })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_degenerate_lengths() {
        let env = Environment::all_open(1);
        let e = enumerate_paths(&env, ExtendedBeta::Infinite, 0, LatticePoint::origin()).unwrap();
        assert_eq!((e.value, e.paths.len()), (1.0, 1));
        let e = enumerate_paths(&env, ExtendedBeta::Infinite, 2, LatticePoint::origin()).unwrap();
        assert_eq!(e.paths.len(), 9);
        assert!(e.paths.iter().all(|(_, h)| *h == 0));
        let mut seen = std::collections::HashSet::new();
        for (p, _) in &e.paths {
            assert!(seen.insert(p.positions.clone()));
        }
        assert!(enumerate_paths(&Environment::all_open(3), ExtendedBeta::Infinite, 9, LatticePoint::origin()).is_err());
    }
}
