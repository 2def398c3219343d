//! Continuous-time distance mathematics between linearly moving points.
//!
//! Everything in this module is exact in the model: a segment moves its point
//! linearly from `start_pos` at `t_start` to `end_pos` at `t_end`, so the
//! squared distance between two segments is a quadratic in `t` with a
//! nonnegative leading coefficient. The sublevel set `{t : |Δ(t)| ≤ d}`
//! intersected with the temporal overlap is therefore a single closed
//! (possibly empty, possibly degenerate) interval, which [`compare`] returns.
//!
//! All functions are pure; they can be called from any number of workers
//! concurrently.

use std::ops::{Add, Mul, Sub};

use thiserror::Error;

/// Below this leading coefficient the relative motion is treated as zero and
/// the distance as constant over the overlap (avoids dividing by a denormal).
const MIN_QUADRATIC_COEFF: f64 = 1e-300;

/// A point in 3-D space (dataset-defined units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn coord(self, dim: usize) -> f64 {
        match dim {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("dimension out of range: {dim}"),
        }
    }

    #[inline]
    pub fn min_components(self, other: Self) -> Self {
        Self::new(self.x.min(other.x), self.y.min(other.y), self.z.min(other.z))
    }

    #[inline]
    pub fn max_components(self, other: Self) -> Self {
        Self::new(self.x.max(other.x), self.y.max(other.y), self.z.max(other.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Sub for Point3 {
    type Output = Point3;
    #[inline]
    fn sub(self, rhs: Self) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Add for Point3 {
    type Output = Point3;
    #[inline]
    fn add(self, rhs: Self) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// A closed time interval. Zero length is allowed (single-instant tangency).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeInterval {
    pub begin: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(begin: f64, end: f64) -> Self {
        debug_assert!(begin <= end);
        Self { begin, end }
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.end - self.begin
    }
}

/// A spatial minimum bounding box (componentwise min/max corners).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mbb {
    pub min: Point3,
    pub max: Point3,
}

impl Mbb {
    pub fn new(min: Point3, max: Point3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Self { min, max }
    }

    /// The box grown by `d` on every face. Candidate selection runs on the
    /// expanded query box: an entry within distance `d` of the query must
    /// intersect it, so grid/slab lookups cannot miss it.
    pub fn expanded(&self, d: f64) -> Mbb {
        debug_assert!(d >= 0.0);
        let pad = Point3::new(d, d, d);
        Mbb {
            min: self.min - pad,
            max: self.max + pad,
        }
    }

    #[inline]
    pub fn intersects(&self, other: &Mbb) -> bool {
        self.min.x <= other.max.x
            && self.max.x >= other.min.x
            && self.min.y <= other.max.y
            && self.max.y >= other.min.y
            && self.min.z <= other.max.z
            && self.max.z >= other.min.z
    }

    pub fn union(&self, other: &Mbb) -> Mbb {
        Mbb {
            min: self.min.min_components(other.min),
            max: self.max.max_components(other.max),
        }
    }
}

/// Rejected segment at ingest.
#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("segment ({trajectory},{segment}): non-finite coordinate")]
    NonFinite { trajectory: u32, segment: u32 },
    #[error(
        "segment ({trajectory},{segment}): temporal extent must be positive (t_start {t_start}, t_end {t_end})"
    )]
    EmptyTemporalExtent {
        trajectory: u32,
        segment: u32,
        t_start: f64,
        t_end: f64,
    },
}

/// A 4-D trajectory line segment: two spatiotemporal endpoints plus the
/// trajectory id and the segment's temporal rank within its trajectory.
///
/// The moving point is at `start_pos` at time `t_start`, at `end_pos` at time
/// `t_end`, and interpolates linearly in between. `t_start < t_end` strictly;
/// degenerate instants are rejected at ingest ([`SegmentST::new`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentST {
    pub trajectory: u32,
    pub segment: u32,
    pub start_pos: Point3,
    pub end_pos: Point3,
    pub t_start: f64,
    pub t_end: f64,
}

impl SegmentST {
    pub fn new(
        trajectory: u32,
        segment: u32,
        start_pos: Point3,
        end_pos: Point3,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self, SegmentError> {
        if !(start_pos.is_finite() && end_pos.is_finite() && t_start.is_finite() && t_end.is_finite())
        {
            return Err(SegmentError::NonFinite {
                trajectory,
                segment,
            });
        }
        if t_start >= t_end {
            return Err(SegmentError::EmptyTemporalExtent {
                trajectory,
                segment,
                t_start,
                t_end,
            });
        }
        Ok(Self {
            trajectory,
            segment,
            start_pos,
            end_pos,
            t_start,
            t_end,
        })
    }

    /// Spatial MBB: componentwise min/max of the two endpoints.
    #[inline]
    pub fn mbb(&self) -> Mbb {
        Mbb {
            min: self.start_pos.min_components(self.end_pos),
            max: self.start_pos.max_components(self.end_pos),
        }
    }

    /// Position of the moving point at time `t`, with `t_start ≤ t ≤ t_end`.
    #[inline]
    pub fn position_at(&self, t: f64) -> Point3 {
        debug_assert!(self.t_start <= t && t <= self.t_end);
        let frac = (t - self.t_start) / (self.t_end - self.t_start);
        self.start_pos + (self.end_pos - self.start_pos) * frac
    }

    /// Constant velocity vector over the segment's extent.
    #[inline]
    pub fn velocity(&self) -> Point3 {
        (self.end_pos - self.start_pos) * (1.0 / (self.t_end - self.t_start))
    }

    /// Temporal extent `t_end - t_start`.
    #[inline]
    pub fn temporal_extent(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// One result record: a (query segment, entry segment) pair and the closed
/// time interval during which the two are within the threshold distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub query_trajectory: u32,
    pub query_segment: u32,
    pub entry_trajectory: u32,
    pub entry_segment: u32,
    pub interval: TimeInterval,
}

impl Interaction {
    /// Canonical sort/dedup key: the four segment ids.
    #[inline]
    pub fn key(&self) -> (u32, u32, u32, u32) {
        (
            self.query_trajectory,
            self.query_segment,
            self.entry_trajectory,
            self.entry_segment,
        )
    }
}

/// One Newton step on the quadratic `c2 τ² + c1 τ + c0`, rejected if it does
/// not reduce the residual.
fn polish_root(tau: f64, c2: f64, c1: f64, c0: f64) -> f64 {
    let f = (c2 * tau + c1) * tau + c0;
    let fp = 2.0 * c2 * tau + c1;
    if fp == 0.0 {
        return tau;
    }
    let refined = tau - f / fp;
    if !refined.is_finite() {
        return tau;
    }
    let fr = (c2 * refined + c1) * refined + c0;
    if fr.abs() <= f.abs() {
        refined
    } else {
        tau
    }
}

/// The refinement primitive of every search kernel: the closed time interval
/// within the two segments' temporal overlap during which their Euclidean
/// distance is at most `d` (`d > 0`), or `None` if there is none.
///
/// Over the overlap `[a, b]` the relative displacement is affine in `t`, so
/// `f(t) = |Δ(t)|² − d²` is a quadratic with nonnegative leading coefficient
/// and its sublevel set intersected with `[a, b]` is a single closed interval.
/// The quadratic is solved with the cancellation-free root form
/// `q = −(c1 + sign(c1)·√disc)/2`, roots `q/c2` and `c0/q`, each polished with
/// one Newton step; tangency is reported as a zero-length interval.
pub fn compare(entry: &SegmentST, query: &SegmentST, d: f64) -> Option<Interaction> {
    debug_assert!(d > 0.0);
    let begin = entry.t_start.max(query.t_start);
    let end = entry.t_end.min(query.t_end);
    if begin > end {
        return None;
    }
    let span = end - begin;

    // Relative state at the overlap start; Δ(begin + τ) = p + τ·v.
    let p = query.position_at(begin) - entry.position_at(begin);
    let v = query.velocity() - entry.velocity();
    let c2 = v.norm_sq();
    let c1 = 2.0 * p.dot(v);
    let c0 = p.norm_sq() - d * d;

    let (lo, hi) = if c2 < MIN_QUADRATIC_COEFF {
        // No relative motion: the distance is constant over the overlap.
        if c0 <= 0.0 {
            (0.0, span)
        } else {
            return None;
        }
    } else {
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
        let (r0, r1) = if q == 0.0 {
            // c1 = 0 and disc = 0: double root at τ = 0.
            (0.0, 0.0)
        } else {
            (q / c2, c0 / q)
        };
        let r0 = polish_root(r0, c2, c1, c0);
        let r1 = polish_root(r1, c2, c1, c0);
        let (lo, hi) = if r0 <= r1 { (r0, r1) } else { (r1, r0) };
        if lo > span || hi < 0.0 {
            return None;
        }
        (lo.max(0.0), hi.min(span))
    };

    // Clipped endpoints coincide bitwise with the overlap bounds.
    let t_begin = if lo <= 0.0 { begin } else { begin + lo };
    let t_end = if hi >= span { end } else { begin + hi };
    debug_assert!(t_begin.is_finite() && t_end.is_finite());
    Some(Interaction {
        query_trajectory: query.trajectory,
        query_segment: query.segment,
        entry_trajectory: entry.trajectory,
        entry_segment: entry.segment,
        interval: TimeInterval::new(t_begin, t_end.max(t_begin)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn seg(
        id: (u32, u32),
        start: (f64, f64, f64),
        end: (f64, f64, f64),
        t: (f64, f64),
    ) -> SegmentST {
        SegmentST::new(
            id.0,
            id.1,
            Point3::new(start.0, start.1, start.2),
            Point3::new(end.0, end.1, end.2),
            t.0,
            t.1,
        )
        .unwrap()
    }

    /// Squared-distance-minus-d² between two segments at time t.
    fn f_at(entry: &SegmentST, query: &SegmentST, d: f64, t: f64) -> f64 {
        (query.position_at(t) - entry.position_at(t)).norm_sq() - d * d
    }

    #[test]
    fn mbb_of_segment() {
        // Endpoints (4,2,3) -> (5,3,1).
        let s = seg((0, 0), (4.0, 2.0, 3.0), (5.0, 3.0, 1.0), (0.0, 1.0));
        let b = s.mbb();
        assert_eq!(b.min, Point3::new(4.0, 2.0, 1.0));
        assert_eq!(b.max, Point3::new(5.0, 3.0, 3.0));

        let degenerate = seg((0, 0), (1.0, 2.0, 3.0), (1.0, 2.0, 3.0), (0.0, 1.0));
        assert_eq!(degenerate.mbb().min, degenerate.mbb().max);

        let s = seg((0, 0), (0.0, 0.0, 0.0), (-1.0, 2.0, -3.0), (0.0, 1.0));
        assert_eq!(s.mbb().min, Point3::new(-1.0, 0.0, -3.0));
        assert_eq!(s.mbb().max, Point3::new(0.0, 2.0, 0.0));
    }

    #[test]
    fn mbb_expansion() {
        let b = Mbb::new(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0));
        assert_eq!(b.expanded(0.0), b);
        let grown = b.expanded(2.0);
        assert_eq!(grown.min, Point3::new(-2.0, -2.0, -2.0));
        assert_eq!(grown.max, Point3::new(3.0, 3.0, 3.0));

        let b = Mbb::new(Point3::new(4.0, 2.0, 1.0), Point3::new(5.0, 3.0, 3.0));
        let grown = b.expanded(0.5);
        assert_eq!(grown.min, Point3::new(3.5, 1.5, 0.5));
        assert_eq!(grown.max, Point3::new(5.5, 3.5, 3.5));
    }

    #[test]
    fn position_interpolates_linearly() {
        let s = seg((0, 0), (0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (0.0, 10.0));
        assert_eq!(s.position_at(0.0), s.start_pos);
        assert_eq!(s.position_at(10.0), s.end_pos);
        assert_eq!(s.position_at(2.5), Point3::new(2.5, 0.0, 0.0));
    }

    #[test]
    fn ingest_rejects_degenerate_segments() {
        let p = Point3::new(0.0, 0.0, 0.0);
        assert!(matches!(
            SegmentST::new(1, 2, p, p, 3.0, 3.0),
            Err(SegmentError::EmptyTemporalExtent { trajectory: 1, segment: 2, .. })
        ));
        assert!(matches!(
            SegmentST::new(1, 2, p, p, 5.0, 3.0),
            Err(SegmentError::EmptyTemporalExtent { .. })
        ));
        assert!(matches!(
            SegmentST::new(0, 0, Point3::new(f64::NAN, 0.0, 0.0), p, 0.0, 1.0),
            Err(SegmentError::NonFinite { .. })
        ));
        assert!(matches!(
            SegmentST::new(0, 0, p, p, f64::INFINITY, 1.0),
            Err(SegmentError::NonFinite { .. })
        ));
    }

    #[test]
    fn compare_identical_stationary_segments() {
        let p = (3.0, -2.0, 7.0);
        let a = seg((0, 0), p, p, (0.0, 1.0));
        let b = seg((1, 0), p, p, (0.0, 1.0));
        let hit = compare(&a, &b, 1.0).unwrap();
        assert_eq!(hit.interval, TimeInterval::new(0.0, 1.0));
    }

    #[test]
    fn compare_without_temporal_overlap() {
        let a = seg((0, 0), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0));
        let b = seg((1, 0), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 3.0));
        assert!(compare(&a, &b, 10.0).is_none());
    }

    #[test]
    fn compare_flyby_interval() {
        // Entry moves (0,0,0)->(10,0,0) over [0,10]; query parked at (5,3,0).
        // (t-5)² + 9 ≤ 25 gives [1, 9].
        let entry = seg((0, 0), (0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (0.0, 10.0));
        let query = seg((1, 0), (5.0, 3.0, 0.0), (5.0, 3.0, 0.0), (0.0, 10.0));
        let hit = compare(&entry, &query, 5.0).unwrap();
        assert!((hit.interval.begin - 1.0).abs() < 1e-12);
        assert!((hit.interval.end - 9.0).abs() < 1e-12);

        // Dense-sampling cross-check of the same pair.
        let (lo, hi) = sampled_interval(&entry, &query, 5.0, 1_000_000).unwrap();
        assert!((hit.interval.begin - lo).abs() < 1e-5);
        assert!((hit.interval.end - hi).abs() < 1e-5);
    }

    #[test]
    fn compare_tangency_is_zero_length() {
        // Closest approach is exactly d: a single-instant contact.
        let entry = seg((0, 0), (0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (0.0, 10.0));
        let query = seg((1, 0), (5.0, 3.0, 0.0), (5.0, 3.0, 0.0), (0.0, 10.0));
        let hit = compare(&entry, &query, 3.0).unwrap();
        assert!((hit.interval.begin - 5.0).abs() < 1e-9);
        assert!(hit.interval.length() < 1e-9);
        assert!(compare(&entry, &query, 2.999_999).is_none());
    }

    /// Crude sampling oracle used by the unit tests; the acceptance suite
    /// carries the rigorous sampling + bisection version.
    fn sampled_interval(
        entry: &SegmentST,
        query: &SegmentST,
        d: f64,
        samples: usize,
    ) -> Option<(f64, f64)> {
        let a = entry.t_start.max(query.t_start);
        let b = entry.t_end.min(query.t_end);
        if a > b {
            return None;
        }
        let mut lo = None;
        let mut hi = None;
        for i in 0..=samples {
            let t = (a + (b - a) * (i as f64) / (samples as f64)).min(b);
            if f_at(entry, query, d, t) <= 0.0 {
                if lo.is_none() {
                    lo = Some(t);
                }
                hi = Some(t);
            }
        }
        lo.map(|l| (l, hi.unwrap()))
    }

    fn random_segment(rng: &mut ChaCha8Rng, id: (u32, u32)) -> SegmentST {
        let p = |rng: &mut ChaCha8Rng| {
            Point3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            )
        };
        let t0 = rng.gen_range(0.0..10.0);
        let dt = rng.gen_range(0.1..10.0);
        SegmentST::new(id.0, id.1, p(rng), p(rng), t0, t0 + dt).unwrap()
    }

    #[test]
    fn compare_is_symmetric_and_monotone_in_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for i in 0..2000 {
            let a = random_segment(&mut rng, (0, i));
            let b = random_segment(&mut rng, (1, i));
            let d1 = rng.gen_range(0.5..30.0);
            let d2 = d1 + rng.gen_range(0.0..30.0);

            let fwd = compare(&a, &b, d1);
            let rev = compare(&b, &a, d1);
            match (fwd, rev) {
                (None, None) => {}
                (Some(x), Some(y)) => assert_eq!(x.interval, y.interval),
                other => panic!("asymmetric result: {other:?}"),
            }

            // Interval at d1 is contained in the interval at d2 ≥ d1.
            if let Some(small) = fwd {
                let big = compare(&a, &b, d2).expect("monotonicity: larger d lost the interval");
                assert!(big.interval.begin <= small.interval.begin + 1e-9);
                assert!(big.interval.end >= small.interval.end - 1e-9);
            }
        }
    }

    #[test]
    fn compare_interval_satisfies_distance_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits = 0;
        for i in 0..2000 {
            let a = random_segment(&mut rng, (0, i));
            let b = random_segment(&mut rng, (1, i));
            let d = rng.gen_range(1.0..60.0);
            let Some(hit) = compare(&a, &b, d) else {
                continue;
            };
            hits += 1;
            let iv = hit.interval;
            for k in 0..=1000 {
                let t = (iv.begin + iv.length() * (k as f64) / 1000.0).min(iv.end);
                let dist = (b.position_at(t) - a.position_at(t)).norm_sq().sqrt();
                assert!(dist <= d + 1e-9, "f > 0 inside returned interval");
            }
            // Non-clipped endpoints sit on the distance-d shell.
            let overlap_start = a.t_start.max(b.t_start);
            let overlap_end = a.t_end.min(b.t_end);
            if iv.begin > overlap_start {
                let dist = (b.position_at(iv.begin) - a.position_at(iv.begin)).norm_sq().sqrt();
                assert!((dist - d).abs() <= 1e-9);
            }
            if iv.end < overlap_end {
                let dist = (b.position_at(iv.end) - a.position_at(iv.end)).norm_sq().sqrt();
                assert!((dist - d).abs() <= 1e-9);
            }
        }
        assert!(hits > 100, "distribution produced too few interactions");
    }

    #[test]
    fn compare_agrees_with_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..300 {
            let a = random_segment(&mut rng, (0, i));
            let b = random_segment(&mut rng, (1, i));
            let d = rng.gen_range(1.0..60.0);
            let got = compare(&a, &b, d).map(|h| (h.interval.begin, h.interval.end));
            let want = sampled_interval(&a, &b, d, 20_000);
            match (got, want) {
                (None, None) => {}
                (Some((gl, gh)), Some((wl, wh))) => {
                    let overlap = a.t_end.min(b.t_end) - a.t_start.max(b.t_start);
                    let step = overlap / 20_000.0;
                    assert!((gl - wl).abs() <= step * 1.5);
                    assert!((gh - wh).abs() <= step * 1.5);
                }
                (Some((gl, gh)), None) => {
                    // Sub-sample-width interval the sampler cannot see.
                    assert!(gh - gl <= 2.0 * (a.t_end.min(b.t_end) - a.t_start.max(b.t_start)) / 20_000.0);
                }
                (None, Some(_)) => panic!("compare missed an interval the sampler found"),
            }
        }
    }
}
