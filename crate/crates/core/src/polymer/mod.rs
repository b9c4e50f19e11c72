//! Path counts and partition functions.
//!
//! `Z_n^β = Σ_π exp(-β H_n(π))` over all `(2d+1)^n` paths of length `n`, where
//! `H_n` counts closed sites at times `1..=n`. The sum is not normalised, so
//! `log Z_n^0 = n log(2d+1)`; free-energy estimates carry that offset. At β = ∞
//! only open paths survive and `Z_n^∞ = N_n`.

mod enumerate;
mod exact;
mod sweep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::env::Environment;
use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticePoint, Pos};

pub use enumerate::{enumerate_paths, for_each_path, Enumeration, DEFAULT_ORACLE_CAP};
pub use exact::{
    argmax_endpoint, argmax_midpoint, count_paths_exact, endpoint_counts, outgoing_counts, ExactSlice, Midpoint, DEFAULT_EXACT_CAP,
};
pub use sweep::{
    partition_log, regularized_log, restricted_partition_log, Checkpoint, ScaledReal, Sweep, SweepState, Targets, DEFAULT_CELL_CAP,
};

/// Inverse temperature in `[0, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtendedBeta {
    Finite(f64),
    Infinite,
}

impl ExtendedBeta {
    pub fn finite(beta: f64) -> Result<Self> {
        if beta.is_nan() || beta < 0.0 {
            return invalid(format!("inverse temperature must be >= 0, got {beta}"));
        }
        if beta.is_infinite() {
            return Ok(ExtendedBeta::Infinite);
        }
        Ok(ExtendedBeta::Finite(beta))
    }

    /// Weight `e^{-β}` of one closed site, with `e^{-∞} = 0`.
    pub fn closed_factor(&self) -> f64 {
        match self {
            ExtendedBeta::Finite(b) => (-b).exp(),
            ExtendedBeta::Infinite => 0.0,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtendedBeta::Infinite)
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            ExtendedBeta::Finite(b) => *b,
            ExtendedBeta::Infinite => f64::INFINITY,
        }
    }

    /// `e^{-β h}` for an energy `h`.
    pub fn weight(&self, energy: u64) -> f64 {
        match self {
            ExtendedBeta::Finite(b) => (-b * energy as f64).exp(),
            ExtendedBeta::Infinite => {
                if energy == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl PartialOrd for ExtendedBeta {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.as_f64().partial_cmp(&other.as_f64())
    }
}

impl fmt::Display for ExtendedBeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedBeta::Finite(b) => write!(f, "{b}"),
            ExtendedBeta::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for ExtendedBeta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(ExtendedBeta::Infinite);
        }
        let v: f64 = s.parse().map_err(|_| Error::InvalidArgument(format!("cannot parse inverse temperature {s:?}")))?;
        if v.is_infinite() {
            return invalid(format!("write \"inf\" for infinite inverse temperature, got {s:?}"));
        }
        ExtendedBeta::finite(v)
    }
}

impl Serialize for ExtendedBeta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedBeta::Finite(b) => s.serialize_f64(*b),
            ExtendedBeta::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedBeta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => ExtendedBeta::finite(v).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A nearest-neighbour path `π(s), …, π(t)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub start: u64,
    pub positions: Vec<Pos>,
}

impl Path {
    pub fn new(start: u64, positions: Vec<Pos>) -> Result<Self> {
        if positions.is_empty() {
            return invalid("a path needs at least one position");
        }
        if let Some(w) = positions.windows(2).find(|w| w[0].l1_dist(&w[1]) > 1) {
            return invalid(format!("step {:?} -> {:?} is longer than 1", w[0], w[1]));
        }
        Ok(Path { start, positions })
    }

    pub fn end(&self) -> u64 {
        self.start + self.positions.len() as u64 - 1
    }

    pub fn len(&self) -> u64 {
        self.positions.len() as u64 - 1
    }

    pub fn is_empty(&self) -> bool {
        self.positions.len() == 1
    }

    pub fn at(&self, t: u64) -> Option<Pos> {
        t.checked_sub(self.start).and_then(|i| self.positions.get(i as usize).copied())
    }

    pub fn point(&self, t: u64) -> Option<LatticePoint> {
        self.at(t).map(|x| LatticePoint::new(t, x))
    }
}

/// Number of closed sites visited at times in `(a, b]`.
pub fn path_energy(env: &Environment, path: &Path, a: u64, b: u64) -> Result<u64> {
    if a > b || a < path.start || b > path.end() {
        return invalid(format!("interval ({a}, {b}] outside the path's time domain [{}, {}]", path.start, path.end()));
    }
    let mut h = 0;
    for t in a + 1..=b {
        let x = path.at(t).expect("time inside path");
        if !env.is_open(&LatticePoint::new(t, x))? {
            h += 1;
        }
    }
    Ok(h)
}

/// Full energy `H` over `(start, end]`.
pub fn total_energy(env: &Environment, path: &Path) -> Result<u64> {
    path_energy(env, path, path.start, path.end())
}

/// A path is open when every site after its first is open.
pub fn is_open_path(env: &Environment, path: &Path) -> Result<bool> {
    Ok(total_energy(env, path)? == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_parsing_and_serde() {
        assert_eq!("inf".parse::<ExtendedBeta>().unwrap(), ExtendedBeta::Infinite);
        assert_eq!("2.5".parse::<ExtendedBeta>().unwrap(), ExtendedBeta::Finite(2.5));
        assert!("-1".parse::<ExtendedBeta>().is_err());
        assert!("abc".parse::<ExtendedBeta>().is_err());
        let json = serde_json::to_string(&[ExtendedBeta::Finite(1.0), ExtendedBeta::Infinite]).unwrap();
        assert_eq!(json, "[1.0,\"inf\"]");
        let back: Vec<ExtendedBeta> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![ExtendedBeta::Finite(1.0), ExtendedBeta::Infinite]);
        assert_eq!(ExtendedBeta::Infinite.to_string(), "inf");
        assert!(ExtendedBeta::Finite(3.0) < ExtendedBeta::Infinite);
    }

    #[test]
    fn energy_extremes() {
        let path = Path::new(0, vec![Pos::line(0), Pos::line(1), Pos::line(1), Pos::line(0)]).unwrap();
        assert_eq!(total_energy(&Environment::all_open(1), &path).unwrap(), 0);
        assert_eq!(total_energy(&Environment::all_closed(1), &path).unwrap(), 3);
        assert_eq!(path_energy(&Environment::all_closed(1), &path, 1, 2).unwrap(), 1);
        assert!(path_energy(&Environment::all_closed(1), &path, 1, 4).is_err());
        assert!(Path::new(0, vec![Pos::line(0), Pos::line(2)]).is_err());
    }
}
