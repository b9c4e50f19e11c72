//! Time-space geometry: positions in ℤ^d (d ≤ 3), boxes and dense grids over them.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// A position in ℤ^d. Coordinates beyond the active dimension are kept at zero,
/// so the derived ordering is the lexicographic order on the active coordinates.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos(pub [i64; MAX_DIM]);

impl Pos {
    pub const ORIGIN: Pos = Pos([0; MAX_DIM]);

    /// Builds a position from up to three coordinates.
    pub fn new(coords: &[i64]) -> Pos {
        assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Pos(c)
    }

    pub fn line(x: i64) -> Pos {
        Pos([x, 0, 0])
    }

    pub fn coords(&self, d: usize) -> &[i64] {
        &self.0[..d]
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l1_dist(&self, other: &Pos) -> i64 {
        (*self - *other).l1()
    }

    pub fn linf_dist(&self, other: &Pos) -> i64 {
        (*self - *other).linf()
    }

    /// The 2d+1 positions within ℓ₁ distance 1, the position itself first.
    pub fn neighbors(&self, d: usize) -> impl Iterator<Item = Pos> + '_ {
        unit_steps(d).into_iter().map(move |s| *self + s)
    }
}

impl fmt::Debug for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

impl Add for Pos {
    type Output = Pos;
    fn add(self, o: Pos) -> Pos {
        Pos([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Pos {
    type Output = Pos;
    fn sub(self, o: Pos) -> Pos {
        Pos([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

/// A time-space point (t, x).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LatticePoint {
    pub t: u64,
    pub x: Pos,
}

impl LatticePoint {
    pub fn new(t: u64, x: Pos) -> Self {
        LatticePoint { t, x }
    }

    pub fn origin() -> Self {
        LatticePoint { t: 0, x: Pos::ORIGIN }
    }
}

/// The nearest-neighbour step set {0, ±e_1, …, ±e_d}, staying put first.
pub fn unit_steps(d: usize) -> Vec<Pos> {
    let mut steps = Vec::with_capacity(2 * d + 1);
    steps.push(Pos::ORIGIN);
    for axis in 0..d {
        let mut plus = [0; MAX_DIM];
        plus[axis] = 1;
        let mut minus = [0; MAX_DIM];
        minus[axis] = -1;
        steps.push(Pos(plus));
        steps.push(Pos(minus));
    }
    steps
}

pub fn check_dim(d: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dimension must be 1, 2 or 3, got {d}")))
    }
}

/// ln(2d+1), the per-step entropy of the nearest-neighbour walk.
pub fn log_branching(d: usize) -> f64 {
    ((2 * d + 1) as f64).ln()
}

/// An ℓ∞ box `center + [-radius, radius]^d`, indexed in lexicographic order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cube {
    pub d: usize,
    pub center: Pos,
    pub radius: i64,
}

impl Cube {
    pub fn new(d: usize, center: Pos, radius: i64) -> Cube {
        debug_assert!(radius >= 0);
        Cube { d, center, radius }
    }

    pub fn side(&self) -> usize {
        (2 * self.radius + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: &Pos) -> bool {
        (0..self.d).all(|i| (x.0[i] - self.center.0[i]).abs() <= self.radius) && (self.d..MAX_DIM).all(|i| x.0[i] == 0)
    }

    pub fn index(&self, x: &Pos) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let side = self.side() as i64;
        let mut idx = 0i64;
        for i in 0..self.d {
            idx = idx * side + (x.0[i] - self.center.0[i] + self.radius);
        }
        Some(idx as usize)
    }

    pub fn pos(&self, mut idx: usize) -> Pos {
        let side = self.side();
        let mut c = [0; MAX_DIM];
        for i in (0..self.d).rev() {
            c[i] = (idx % side) as i64 - self.radius + self.center.0[i];
            idx /= side;
        }
        Pos(c)
    }

    /// Strides of the active axes; axis 0 varies slowest.
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let side = self.side();
        let mut s = [0; MAX_DIM];
        let mut acc = 1;
        for i in (0..self.d).rev() {
            s[i] = acc;
            acc *= side;
        }
        s
    }

    /// All positions in lexicographic order.
    pub fn positions(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.len()).map(move |i| self.pos(i))
    }
}

/// Dense storage over a [`Cube`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    cube: Cube,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(cube: Cube, value: T) -> Self {
        Grid { cube, data: vec![value; cube.len()] }
    }
}

impl<T> Grid<T> {
    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn get(&self, x: &Pos) -> Option<&T> {
        self.cube.index(x).map(|i| &self.data[i])
    }

    pub fn get_mut(&mut self, x: &Pos) -> Option<&mut T> {
        self.cube.index(x).map(move |i| &mut self.data[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pos, &T)> + '_ {
        self.data.iter().enumerate().map(move |(i, v)| (self.cube.pos(i), v))
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_index_roundtrip_is_lexicographic() {
        let cube = Cube::new(2, Pos::new(&[1, -1]), 2);
        let all: Vec<Pos> = cube.positions().collect();
        assert_eq!(all.len(), 25);
        for (i, p) in all.iter().enumerate() {
            assert_eq!(cube.index(p), Some(i));
        }
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, all);
        assert_eq!(cube.index(&Pos::new(&[4, 0])), None);
    }

    #[test]
    fn steps_have_unit_l1_norm() {
        for d in 1..=3 {
            let steps = unit_steps(d);
            assert_eq!(steps.len(), 2 * d + 1);
            assert_eq!(steps[0], Pos::ORIGIN);
            assert!(steps[1..].iter().all(|s| s.l1() == 1));
        }
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(check_dim(0).is_err());
        assert!(check_dim(4).is_err());
        assert!(check_dim(3).is_ok());
    }
}
