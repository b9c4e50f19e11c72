//! Deterministic time-space environments.
//!
//! Every random bit in the crate comes from a [`UniformField`], a counter-based
//! pseudo-random function of `(seed, t, x)`. An [`Environment`] is a list of time
//! segments, each reading a site rule at shifted coordinates; splicing and slab
//! insertion only rewrite that list, so they never copy or sample anything.
//!
//! Child seeds are derived with [`derive_seed`]:
//! `child = hash64(parent, role, index)`, where `hash64` folds the parent, each
//! byte of `role` and the index through the splitmix64 finalizer. The rule is
//! part of the public interface and will not change between versions.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::lattice::{check_dim, LatticePoint, Pos, MAX_DIM};

/// Spatial window used when none is configured.
pub const DEFAULT_SPATIAL_LIMIT: i64 = 1 << 40;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const AXIS_KEYS: [u64; MAX_DIM] = [0xD1B5_4A32_D192_ED03, 0xAEF1_7502_108E_F2D9, 0x8CB9_2BA7_2F3D_8DD7];

/// splitmix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable child-seed derivation: `hash64(parent, role, index)`.
pub fn derive_seed(parent: u64, role: &str, index: u64) -> u64 {
    let mut h = mix64(parent ^ GOLDEN);
    for b in role.bytes() {
        h = mix64(h ^ u64::from(b).wrapping_add(GOLDEN));
    }
    mix64(h ^ mix64(index.wrapping_add(GOLDEN)))
}

/// A cheap sequential generator for resampling loops that do not need coupling.
#[derive(Clone, Debug)]
pub struct SplitMix {
    state: u64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Pure uniform field `U(t, x)` in `[0, 1)` with 53-bit resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UniformField {
    pub seed: u64,
    pub d: usize,
}

impl UniformField {
    pub fn new(seed: u64, d: usize) -> Self {
        UniformField { seed, d }
    }

    #[inline]
    fn row_key(&self, t: u64) -> u64 {
        mix64(self.seed ^ mix64(t.wrapping_add(GOLDEN)))
    }

    #[inline]
    fn bits_with_key(&self, key: u64, x: &Pos) -> u64 {
        let mut h = key;
        for (c, key) in x.0.iter().zip(AXIS_KEYS).take(self.d) {
            h = mix64(h ^ (*c as u64).wrapping_mul(key));
        }
        h >> 11
    }

    /// Raw 53-bit integer behind [`UniformField::value`].
    pub fn bits(&self, t: u64, x: &Pos) -> u64 {
        self.bits_with_key(self.row_key(t), x)
    }

    pub fn value(&self, t: u64, x: &Pos) -> f64 {
        self.bits(t, x) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Integer threshold `τ` with `bits < τ` exactly when `bits / 2^53 < p`.
pub fn open_threshold(p: f64) -> u64 {
    let scaled = (p.clamp(0.0, 1.0) * (1u64 << 53) as f64).ceil();
    scaled as u64
}

/// Openness as an arbitrary function of `(t, x)`.
pub type SiteFn = Arc<dyn Fn(u64, &Pos) -> bool + Send + Sync>;

/// How a segment decides openness at its source coordinates.
#[derive(Clone)]
pub enum SiteRule {
    Bernoulli { field: UniformField, p: f64, threshold: u64 },
    Constant(bool),
    Custom(SiteFn),
}

impl fmt::Debug for SiteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteRule::Bernoulli { field, p, .. } => write!(f, "Bernoulli(seed={}, p={p})", field.seed),
            SiteRule::Constant(b) => write!(f, "Constant({b})"),
            SiteRule::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl SiteRule {
    pub fn bernoulli(field: UniformField, p: f64) -> Self {
        SiteRule::Bernoulli { field, p, threshold: open_threshold(p) }
    }
}

/// One piece of a splice plan: times `[start, next segment start)` read `rule`
/// at source time `t - delta` and source position `x - shift`.
#[derive(Clone, Debug)]
struct Segment {
    start: u64,
    delta: i64,
    shift: Pos,
    rule: SiteRule,
}

/// A site-percolation environment on `Z+ x Z^d`.
#[derive(Clone, Debug)]
pub struct Environment {
    d: usize,
    segments: Vec<Segment>,
    spatial_limit: i64,
}

impl Environment {
    fn single(d: usize, rule: SiteRule) -> Self {
        Environment { d, segments: vec![Segment { start: 0, delta: 0, shift: Pos::ORIGIN, rule }], spatial_limit: DEFAULT_SPATIAL_LIMIT }
    }

    /// i.i.d. Bernoulli(p) open sites read from `field`.
    pub fn bernoulli(field: UniformField, p: f64) -> Result<Self> {
        check_dim(field.d)?;
        if !(0.0..=1.0).contains(&p) {
            return invalid(format!("open probability {p} outside [0, 1]"));
        }
        Ok(Self::single(field.d, SiteRule::bernoulli(field, p)))
    }

    pub fn from_seed(seed: u64, d: usize, p: f64) -> Result<Self> {
        Self::bernoulli(UniformField::new(seed, d), p)
    }

    pub fn all_open(d: usize) -> Self {
        Self::single(d, SiteRule::Constant(true))
    }

    pub fn all_closed(d: usize) -> Self {
        Self::single(d, SiteRule::Constant(false))
    }

    /// Environment given by an arbitrary predicate, mostly for tests and oracles.
    pub fn custom(d: usize, f: impl Fn(u64, &Pos) -> bool + Send + Sync + 'static) -> Self {
        Self::single(d, SiteRule::Custom(Arc::new(f)))
    }

    pub fn with_spatial_limit(mut self, limit: i64) -> Self {
        self.spatial_limit = limit;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn spatial_limit(&self) -> i64 {
        self.spatial_limit
    }

    fn segment_at(&self, t: u64) -> &Segment {
        let i = self.segments.partition_point(|s| s.start <= t);
        &self.segments[i - 1]
    }

    /// The open probability governing slice `t`, if it is a Bernoulli slice.
    pub fn law_at(&self, t: u64) -> Option<f64> {
        match &self.segment_at(t).rule {
            SiteRule::Bernoulli { p, .. } => Some(*p),
            SiteRule::Constant(b) => Some(if *b { 1.0 } else { 0.0 }),
            SiteRule::Custom(_) => None,
        }
    }

    /// Errors if the box `[-radius, radius]^d` around `center` leaves the spatial window.
    pub fn check_window(&self, t: u64, center: &Pos, radius: i64) -> Result<()> {
        let far = center.linf() + radius;
        if far > self.spatial_limit {
            let axis = (0..self.d).max_by_key(|&i| center.0[i].abs()).unwrap_or(0);
            let mut x = *center;
            x.0[axis] += if center.0[axis] < 0 { -radius } else { radius };
            return Err(Error::SpatialWindow { t, x, limit: self.spatial_limit });
        }
        Ok(())
    }

    pub fn is_open(&self, point: &LatticePoint) -> Result<bool> {
        if point.x.linf() > self.spatial_limit {
            return Err(Error::SpatialWindow { t: point.t, x: point.x, limit: self.spatial_limit });
        }
        Ok(self.slice(point.t).is_open(&point.x))
    }

    /// Resolves the segment for slice `t` once. The view does not re-check the
    /// spatial window; callers use [`Environment::check_window`] for the box they scan.
    pub fn slice(&self, t: u64) -> SliceView<'_> {
        let seg = self.segment_at(t);
        let src_t = (t as i64 - seg.delta) as u64;
        let key = match &seg.rule {
            SiteRule::Bernoulli { field, .. } => field.row_key(src_t),
            _ => 0,
        };
        SliceView { seg, src_t, key }
    }

    fn check_same_dim(&self, other: &Environment) -> Result<()> {
        if self.d != other.d {
            return Err(Error::Dimension { expected: self.d, got: other.d });
        }
        Ok(())
    }

    /// Segments of `self` restricted to times `[from, to]` (inclusive, `to = None` for ∞)
    /// and moved so that source time `from` lands at destination time `dst`.
    fn moved_segments(&self, from: u64, to: Option<u64>, dst: u64) -> Vec<Segment> {
        let shift = dst as i64 - from as i64;
        let mut out = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            let seg_end = self.segments.get(i + 1).map(|s| s.start - 1);
            let lo = seg.start.max(from);
            let hi = match (seg_end, to) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (Some(a), None) => Some(a),
                (None, b) => b,
            };
            if hi.is_some_and(|h| h < lo) {
                continue;
            }
            out.push(Segment { start: (lo as i64 + shift) as u64, delta: seg.delta + shift, shift: seg.shift, rule: seg.rule.clone() });
        }
        out
    }

    fn with_segments(&self, segments: Vec<Segment>) -> Environment {
        debug_assert_eq!(segments.first().map(|s| s.start), Some(0));
        debug_assert!(segments.windows(2).all(|w| w[0].start < w[1].start));
        Environment { d: self.d, segments, spatial_limit: self.spatial_limit }
    }

    /// `[b, e]_k`: `b` at times `<= k`, `e(t - k, x)` at times `> k`.
    pub fn splice(b: &Environment, e: &Environment, k: u64) -> Result<Environment> {
        b.check_same_dim(e)?;
        let mut segs = b.moved_segments(0, Some(k), 0);
        segs.extend(e.moved_segments(1, None, k + 1));
        Ok(b.with_segments(segs))
    }

    /// `[b, sl, e]_{k,l}`: `b` up to `k`, `sl(t - k, x)` on `(k, l]`, `e(t - l, x)` after `l`.
    pub fn splice_slab(b: &Environment, sl: &Environment, e: &Environment, k: u64, l: u64) -> Result<Environment> {
        if k > l {
            return invalid(format!("slab start {k} exceeds slab end {l}"));
        }
        b.check_same_dim(sl)?;
        b.check_same_dim(e)?;
        let mut segs = b.moved_segments(0, Some(k), 0);
        if l > k {
            segs.extend(sl.moved_segments(1, Some(l - k), k + 1));
        }
        segs.extend(e.moved_segments(1, None, l + 1));
        Ok(b.with_segments(segs))
    }

    /// Replaces times `[from, to]` with `rule` read at unshifted coordinates.
    pub fn with_rule_on(&self, from: u64, to: u64, rule: SiteRule) -> Environment {
        let mut segs = if from > 0 { self.moved_segments(0, Some(from - 1), 0) } else { Vec::new() };
        segs.push(Segment { start: from, delta: 0, shift: Pos::ORIGIN, rule });
        segs.extend(self.moved_segments(to + 1, None, to + 1));
        self.with_segments(segs)
    }

    /// Forces every site of slice `t` open or closed.
    pub fn with_slice(&self, t: u64, open: bool) -> Environment {
        self.with_rule_on(t, t, SiteRule::Constant(open))
    }

    /// Translate by `(dt, dx)`: the new environment at `(t + dt, x + dx)` equals the
    /// old one at `(t, x)`. Times before `dt` are closed.
    pub fn translated(&self, dt: u64, dx: Pos) -> Environment {
        let mut segs = Vec::new();
        if dt > 0 {
            segs.push(Segment { start: 0, delta: 0, shift: Pos::ORIGIN, rule: SiteRule::Constant(false) });
        }
        for mut seg in self.moved_segments(0, None, dt) {
            seg.shift = seg.shift + dx;
            segs.push(seg);
        }
        self.with_segments(segs)
    }

    /// Restricts queries to the times `[start, end]`.
    pub fn window(&self, start: u64, end: u64) -> Result<EnvironmentWindow<'_>> {
        if start > end {
            return invalid(format!("window start {start} exceeds end {end}"));
        }
        Ok(EnvironmentWindow { env: self, start, end })
    }
}

/// Openness of one time slice with the segment lookup hoisted out.
#[derive(Clone, Copy)]
pub struct SliceView<'a> {
    seg: &'a Segment,
    src_t: u64,
    key: u64,
}

impl SliceView<'_> {
    #[inline]
    pub fn is_open(&self, x: &Pos) -> bool {
        let src = *x - self.seg.shift;
        match &self.seg.rule {
            SiteRule::Bernoulli { field, threshold, .. } => field.bits_with_key(self.key, &src) < *threshold,
            SiteRule::Constant(b) => *b,
            SiteRule::Custom(f) => f(self.src_t, &src),
        }
    }

    /// `Some(open)` if every site of the slice has the same state.
    pub fn constant(&self) -> Option<bool> {
        match &self.seg.rule {
            SiteRule::Constant(b) => Some(*b),
            SiteRule::Bernoulli { threshold, .. } if *threshold == 0 => Some(false),
            SiteRule::Bernoulli { threshold, .. } if *threshold >= 1 << 53 => Some(true),
            _ => None,
        }
    }
}

/// An environment seen only through the times `[start, end]`.
#[derive(Clone, Copy, Debug)]
pub struct EnvironmentWindow<'a> {
    env: &'a Environment,
    start: u64,
    end: u64,
}

impl<'a> EnvironmentWindow<'a> {
    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn env(&self) -> &'a Environment {
        self.env
    }

    pub fn is_open(&self, point: &LatticePoint) -> Result<bool> {
        if point.t < self.start || point.t > self.end {
            return Err(Error::TimeWindow { t: point.t, start: self.start, end: self.end });
        }
        self.env.is_open(point)
    }
}

/// Two environments reading one field with thresholds `p <= q`, so every site open
/// for `p` is open for `q`.
pub fn coupled_pair(field: UniformField, p: f64, q: f64) -> Result<(Environment, Environment)> {
    if p > q {
        return invalid(format!("coupled pair needs p <= q, got p={p}, q={q}"));
    }
    Ok((Environment::bernoulli(field, p)?, Environment::bernoulli(field, q)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(t: u64, x: i64) -> LatticePoint {
        LatticePoint::new(t, Pos::line(x))
    }

    #[test]
    fn extreme_probabilities() {
        let f = UniformField::new(5, 2);
        let open = Environment::bernoulli(f, 1.0).unwrap();
        let closed = Environment::bernoulli(f, 0.0).unwrap();
        for t in 0..20 {
            for x in -5..=5 {
                let p = LatticePoint::new(t, Pos::new(&[x, -x]));
                assert!(open.is_open(&p).unwrap());
                assert!(!closed.is_open(&p).unwrap());
            }
        }
    }

    #[test]
    fn threshold_matches_real_comparison() {
        let f = UniformField::new(99, 1);
        for &p in &[0.1, 0.4, 0.5, 0.7, 0.999] {
            let env = Environment::bernoulli(f, p).unwrap();
            for t in 0..50 {
                for x in -10..=10 {
                    assert_eq!(env.is_open(&pt(t, x)).unwrap(), f.value(t, &Pos::line(x)) < p);
                }
            }
        }
    }

    #[test]
    fn splice_reads_the_right_source() {
        let b = Environment::from_seed(1, 1, 0.5).unwrap();
        let e = Environment::from_seed(2, 1, 0.5).unwrap();
        let sl = Environment::from_seed(3, 1, 0.5).unwrap();
        let s = Environment::splice(&b, &e, 4).unwrap();
        let s3 = Environment::splice_slab(&b, &sl, &e, 4, 9).unwrap();
        let same = Environment::splice_slab(&b, &sl, &e, 4, 4).unwrap();
        for x in -6..=6 {
            for t in 0..=4 {
                assert_eq!(s.is_open(&pt(t, x)), b.is_open(&pt(t, x)));
                assert_eq!(s3.is_open(&pt(t, x)), b.is_open(&pt(t, x)));
            }
            for t in 5..20 {
                assert_eq!(s.is_open(&pt(t, x)), e.is_open(&pt(t - 4, x)));
                assert_eq!(same.is_open(&pt(t, x)), e.is_open(&pt(t - 4, x)));
            }
            for t in 5..=9 {
                assert_eq!(s3.is_open(&pt(t, x)), sl.is_open(&pt(t - 4, x)));
            }
            for t in 10..20 {
                assert_eq!(s3.is_open(&pt(t, x)), e.is_open(&pt(t - 9, x)));
            }
        }
        assert!(Environment::splice_slab(&b, &sl, &e, 5, 4).is_err());
        let e2 = Environment::from_seed(2, 2, 0.5).unwrap();
        assert!(matches!(Environment::splice(&b, &e2, 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn nested_splices_compose() {
        let a = Environment::from_seed(10, 1, 0.6).unwrap();
        let b = Environment::from_seed(11, 1, 0.6).unwrap();
        let c = Environment::from_seed(12, 1, 0.6).unwrap();
        let inner = Environment::splice(&b, &c, 2).unwrap();
        let outer = Environment::splice(&a, &inner, 3).unwrap();
        for x in -4..=4 {
            assert_eq!(outer.is_open(&pt(5, x)), b.is_open(&pt(2, x)));
            assert_eq!(outer.is_open(&pt(6, x)), c.is_open(&pt(1, x)));
            assert_eq!(outer.is_open(&pt(3, x)), a.is_open(&pt(3, x)));
        }
    }

    #[test]
    fn windows_are_enforced() {
        let env = Environment::from_seed(1, 1, 0.5).unwrap().with_spatial_limit(10);
        assert!(matches!(env.is_open(&pt(0, 11)), Err(Error::SpatialWindow { .. })));
        let w = env.window(3, 5).unwrap();
        assert!(w.is_open(&pt(4, 0)).is_ok());
        assert!(matches!(w.is_open(&pt(6, 0)), Err(Error::TimeWindow { .. })));
        assert!(matches!(w.is_open(&pt(2, 0)), Err(Error::TimeWindow { .. })));
    }

    #[test]
    fn translation_moves_sites() {
        let env = Environment::from_seed(7, 2, 0.5).unwrap();
        let dx = Pos::new(&[3, -2]);
        let moved = env.translated(5, dx);
        for t in 0..10 {
            for x in -3..=3 {
                let p = Pos::new(&[x, x + 1]);
                assert_eq!(moved.is_open(&LatticePoint::new(t + 5, p + dx)).unwrap(), env.is_open(&LatticePoint::new(t, p)).unwrap());
            }
        }
        assert!(!moved.is_open(&LatticePoint::new(4, dx)).unwrap());
    }

    #[test]
    fn seeds_differ_by_role_and_index() {
        let a = derive_seed(1, "slab", 0);
        assert_ne!(a, derive_seed(1, "slab", 1));
        assert_ne!(a, derive_seed(1, "tail", 0));
        assert_ne!(a, derive_seed(2, "slab", 0));
        assert_eq!(a, derive_seed(1, "slab", 0));
    }

    #[test]
    fn coupled_pair_requires_order() {
        let f = UniformField::new(3, 1);
        assert!(coupled_pair(f, 0.8, 0.6).is_err());
        let (lo, hi) = coupled_pair(f, 0.6, 0.8).unwrap();
        for t in 0..30 {
            for x in -8..=8 {
                if lo.is_open(&pt(t, x)).unwrap() {
                    assert!(hi.is_open(&pt(t, x)).unwrap());
                }
            }
        }
    }
}
