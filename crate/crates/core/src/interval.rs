//! Finite unions of intervals on the half-line.
//!
//! The same container holds open gap collections and closed band unions;
//! which reading applies is decided by the caller. Endpoints are compared
//! with an absolute tolerance of [`ENDPOINT_TOL`] only where a dedup or
//! touching decision has to be made. Reported values are never rounded.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Absolute tolerance used when deciding whether two endpoints coincide.
pub const ENDPOINT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntervalError {
    #[error("interval {index} is empty or reversed: ({lo}, {hi})")]
    EmptyInterval { index: usize, lo: f64, hi: f64 },
    #[error("interval {index} has a non-finite or negative endpoint")]
    BadEndpoint { index: usize },
    #[error("intervals {first} and {second} overlap or touch")]
    Overlap { first: usize, second: usize },
    #[error("first gap must start above zero, got {0}")]
    NonPositiveStart(f64),
    #[error("at least one target gap is required")]
    NoTargets,
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("tolerance delta must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("horizon L must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("set has no points inside the window [0, {0}]")]
    EmptyInWindow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Sorted, pairwise disjoint intervals with `0 <= lo_k < hi_k <= lo_{k+1}`.
///
/// An optional unbounded tail `(tail, ∞)` may follow the finite intervals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalSet {
    intervals: Vec<Interval>,
    tail: Option<f64>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set from intervals that are already sorted and disjoint.
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, IntervalError> {
        let intervals: Vec<Interval> = pairs.into_iter().map(|(lo, hi)| Interval::new(lo, hi)).collect();
        check_chain(&intervals)?;
        Ok(Self { intervals, tail: None })
    }

    /// Sorts by left endpoint, then validates.
    pub fn from_unsorted(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, IntervalError> {
        let mut intervals: Vec<Interval> = pairs.into_iter().map(|(lo, hi)| Interval::new(lo, hi)).collect();
        intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        check_chain(&intervals)?;
        Ok(Self { intervals, tail: None })
    }

    /// Closed union of arbitrary (possibly overlapping, possibly degenerate)
    /// intervals. Pieces that overlap or touch within [`ENDPOINT_TOL`] merge.
    pub fn union_of(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut raw: Vec<Interval> = pairs
            .into_iter()
            .filter(|(lo, hi)| lo.is_finite() && hi.is_finite() && hi >= lo)
            .map(|(lo, hi)| Interval::new(lo.max(0.0), hi.max(0.0)))
            .collect();
        raw.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut merged: Vec<Interval> = Vec::with_capacity(raw.len());
        for iv in raw {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi + ENDPOINT_TOL => last.hi = last.hi.max(iv.hi),
                _ => merged.push(iv),
            }
        }
        Self { intervals: merged, tail: None }
    }

    pub fn with_tail(mut self, lo: f64) -> Result<Self, IntervalError> {
        let last_hi = self.intervals.last().map_or(0.0, |iv| iv.hi);
        if !lo.is_finite() || lo < last_hi {
            return Err(IntervalError::BadEndpoint { index: self.intervals.len() });
        }
        self.tail = Some(lo);
        Ok(self)
    }

    pub fn tail(&self) -> Option<f64> {
        self.tail
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len() + usize::from(self.tail.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Interval> {
        self.intervals.iter()
    }

    /// Finite pieces as `(lo, hi)` tuples.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.intervals.iter().map(|iv| (iv.lo, iv.hi)).collect()
    }

    /// Closed pieces clipped to `[0, l]`, with the tail materialized as `[tail, l]`.
    /// Degenerate single points are kept.
    pub fn clipped(&self, l: f64) -> Vec<Interval> {
        let mut out: Vec<Interval> = self
            .intervals
            .iter()
            .filter(|iv| iv.lo <= l && iv.hi >= 0.0)
            .map(|iv| Interval::new(iv.lo.max(0.0), iv.hi.min(l)))
            .collect();
        if let Some(t) = self.tail {
            if t <= l {
                out.push(Interval::new(t.max(0.0), l));
            }
        }
        out
    }
}

fn check_chain(intervals: &[Interval]) -> Result<(), IntervalError> {
    for (k, iv) in intervals.iter().enumerate() {
        if !iv.lo.is_finite() || !iv.hi.is_finite() || iv.lo < 0.0 {
            return Err(IntervalError::BadEndpoint { index: k });
        }
        if iv.lo >= iv.hi {
            return Err(IntervalError::EmptyInterval { index: k, lo: iv.lo, hi: iv.hi });
        }
        if k > 0 && intervals[k - 1].hi > iv.lo {
            return Err(IntervalError::Overlap { first: k - 1, second: k });
        }
    }
    Ok(())
}

impl Serialize for IntervalSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut rows: Vec<(f64, Option<f64>)> = self.intervals.iter().map(|iv| (iv.lo, Some(iv.hi))).collect();
        if let Some(t) = self.tail {
            rows.push((t, None));
        }
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntervalSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<(f64, Option<f64>)> = Vec::deserialize(d)?;
        let mut finite = Vec::new();
        let mut tail = None;
        for (k, (lo, hi)) in rows.iter().enumerate() {
            match hi {
                Some(hi) => finite.push((*lo, *hi)),
                None if k + 1 == rows.len() => tail = Some(*lo),
                None => return Err(D::Error::custom("only the last interval may be unbounded")),
            }
        }
        let set = IntervalSet::new(finite).map_err(D::Error::custom)?;
        match tail {
            Some(t) => set.with_tail(t).map_err(D::Error::custom),
            None => Ok(set),
        }
    }
}

/// Validated target gaps `0 < α_1 < β_1 < α_2 < … < β_m`, with dimension,
/// tolerance and horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSpec {
    pub targets: IntervalSet,
    pub n: usize,
    pub delta: f64,
    pub horizon: f64,
}

impl GapSpec {
    pub fn m(&self) -> usize {
        self.targets.intervals().len()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.targets.iter().map(|iv| iv.lo).collect()
    }

    pub fn beta(&self) -> Vec<f64> {
        self.targets.iter().map(|iv| iv.hi).collect()
    }

    /// Same gaps scaled by `c > 0`; tolerance and horizon scale too.
    pub fn scaled(&self, c: f64) -> Self {
        let targets = IntervalSet::new(self.targets.iter().map(|iv| (c * iv.lo, c * iv.hi)))
            .expect("positive scaling preserves a valid chain");
        Self { targets, n: self.n, delta: c * self.delta, horizon: c * self.horizon }
    }
}

/// Sorts raw target intervals and checks the strict gap chain.
///
/// Touching closures (`β_j = α_{j+1}`) are rejected like overlaps.
pub fn validate_gap_spec(
    raw_intervals: &[(f64, f64)],
    n: usize,
    delta: f64,
    horizon: f64,
) -> Result<GapSpec, IntervalError> {
    if raw_intervals.is_empty() {
        return Err(IntervalError::NoTargets);
    }
    if n < 2 {
        return Err(IntervalError::DimensionTooSmall(n));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(IntervalError::NonPositiveDelta(delta));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(IntervalError::NonPositiveHorizon(horizon));
    }
    // Index errors refer to the caller's order, so check each interval before sorting.
    for (k, &(lo, hi)) in raw_intervals.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(IntervalError::BadEndpoint { index: k });
        }
        if lo >= hi {
            return Err(IntervalError::EmptyInterval { index: k, lo, hi });
        }
    }
    let mut order: Vec<usize> = (0..raw_intervals.len()).collect();
    order.sort_by(|&a, &b| raw_intervals[a].0.total_cmp(&raw_intervals[b].0));
    let first = raw_intervals[order[0]].0;
    if first <= 0.0 {
        return Err(IntervalError::NonPositiveStart(first));
    }
    for w in order.windows(2) {
        let (prev, next) = (raw_intervals[w[0]], raw_intervals[w[1]]);
        if prev.1 >= next.0 {
            return Err(IntervalError::Overlap { first: w[0].min(w[1]), second: w[0].max(w[1]) });
        }
    }
    let targets = IntervalSet::new(order.iter().map(|&k| raw_intervals[k]))?;
    Ok(GapSpec { targets, n, delta, horizon })
}

/// Open complement of the closed union of `bands` inside `[0, l]`.
pub fn complement_on(bands: &IntervalSet, l: f64) -> IntervalSet {
    let closed = IntervalSet::union_of(bands.clipped(l).into_iter().map(|iv| (iv.lo, iv.hi)));
    let mut gaps = Vec::new();
    let mut cursor = 0.0_f64;
    for iv in closed.iter() {
        if iv.lo > cursor + ENDPOINT_TOL {
            gaps.push((cursor, iv.lo));
        }
        cursor = cursor.max(iv.hi);
    }
    if l > cursor + ENDPOINT_TOL {
        gaps.push((cursor, l));
    }
    IntervalSet::new(gaps).expect("complement pieces are ordered and disjoint")
}

/// Largest distance from a point of `pieces` to the closed set `other`.
///
/// `dist(·, other)` is piecewise linear with maxima at the midpoints of the
/// holes of `other`, so checking endpoints plus clipped midpoints is exact.
fn directed_hausdorff(pieces: &[Interval], other: &[Interval]) -> f64 {
    let dist = |x: f64| {
        other
            .iter()
            .map(|iv| if x < iv.lo { iv.lo - x } else if x > iv.hi { x - iv.hi } else { 0.0 })
            .fold(f64::INFINITY, f64::min)
    };
    let mut worst = 0.0_f64;
    for p in pieces {
        worst = worst.max(dist(p.lo)).max(dist(p.hi));
        for w in other.windows(2) {
            let mid = 0.5 * (w[0].hi + w[1].lo);
            if mid > p.lo && mid < p.hi {
                worst = worst.max(dist(mid));
            }
        }
    }
    worst
}

/// Hausdorff distance between the closed unions of `a` and `b`, both
/// intersected with the window `[0, l]`.
pub fn hausdorff_distance(a: &IntervalSet, b: &IntervalSet, l: f64) -> Result<f64, IntervalError> {
    let pa = a.clipped(l);
    let pb = b.clipped(l);
    if pa.is_empty() || pb.is_empty() {
        return Err(IntervalError::EmptyInWindow(l));
    }
    Ok(directed_hausdorff(&pa, &pb).max(directed_hausdorff(&pb, &pa)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapMatch {
    pub target: (f64, f64),
    pub computed: (f64, f64),
    pub edge_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pass: bool,
    pub per_gap: Vec<GapMatch>,
    pub extra_gaps: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Pairs the first `m` computed gaps with the targets and checks edge errors
/// against `δ`. Gaps past the horizon are accepted as extras; further gaps
/// inside `[0, L]` fail the report.
pub fn gap_match_report(computed_gaps: &[(f64, f64)], spec: &GapSpec) -> MatchReport {
    let mut gaps: Vec<(f64, f64)> = computed_gaps.to_vec();
    gaps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let l = spec.horizon;
    let (inside, beyond): (Vec<_>, Vec<_>) = gaps.into_iter().partition(|g| g.0 < l);

    let m = spec.m();
    let per_gap: Vec<GapMatch> = spec
        .targets
        .iter()
        .zip(inside.iter())
        .map(|(t, c)| GapMatch {
            target: (t.lo, t.hi),
            computed: *c,
            edge_error: (c.0 - t.lo).abs() + (c.1 - t.hi).abs(),
        })
        .collect();

    let mut reason = None;
    if inside.len() < m {
        reason = Some(format!("expected {m} gaps in [0, {l}], found {}", inside.len()));
    } else if inside.len() > m {
        reason = Some(format!("{} unexpected gaps inside [0, {l}]", inside.len() - m));
    } else if let Some(bad) = per_gap.iter().position(|g| !(g.edge_error < spec.delta)) {
        reason = Some(format!(
            "gap {} edge error {} exceeds delta {}",
            bad + 1,
            per_gap[bad].edge_error,
            spec.delta
        ));
    }

    let mut extra_gaps: Vec<(f64, f64)> = inside.iter().skip(m).copied().collect();
    extra_gaps.extend(beyond);
    MatchReport { pass: reason.is_none(), per_gap, extra_gaps, reason }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(p: &[(f64, f64)]) -> IntervalSet {
        IntervalSet::new(p.iter().copied()).unwrap()
    }

    #[test]
    fn validate_sorts_targets() {
        let spec = validate_gap_spec(&[(3.0, 4.0), (1.0, 2.0)], 3, 0.01, 50.0).unwrap();
        assert_eq!(spec.targets.pairs(), vec![(1.0, 2.0), (3.0, 4.0)]);
        assert_eq!(spec.m(), 2);
        let single = validate_gap_spec(&[(1.0, 2.0)], 2, 0.01, 50.0).unwrap();
        assert_eq!(single.m(), 1);
    }

    #[test]
    fn validate_errors_are_distinct() {
        assert_eq!(
            validate_gap_spec(&[(1.0, 3.0), (2.0, 4.0)], 3, 0.01, 50.0),
            Err(IntervalError::Overlap { first: 0, second: 1 })
        );
        assert!(matches!(
            validate_gap_spec(&[(1.0, 2.0), (2.0, 4.0)], 3, 0.01, 50.0),
            Err(IntervalError::Overlap { .. })
        ));
        assert_eq!(validate_gap_spec(&[(0.0, 2.0)], 3, 0.01, 50.0), Err(IntervalError::NonPositiveStart(0.0)));
        assert!(matches!(
            validate_gap_spec(&[(2.0, 1.0)], 3, 0.01, 50.0),
            Err(IntervalError::EmptyInterval { index: 0, .. })
        ));
        assert_eq!(validate_gap_spec(&[(1.0, 2.0)], 1, 0.01, 50.0), Err(IntervalError::DimensionTooSmall(1)));
        assert_eq!(validate_gap_spec(&[(1.0, 2.0)], 3, 0.0, 50.0), Err(IntervalError::NonPositiveDelta(0.0)));
        assert_eq!(validate_gap_spec(&[(1.0, 2.0)], 3, 0.1, -1.0), Err(IntervalError::NonPositiveHorizon(-1.0)));
        assert_eq!(validate_gap_spec(&[], 3, 0.1, 1.0), Err(IntervalError::NoTargets));
    }

    #[test]
    fn complement_examples() {
        assert_eq!(complement_on(&set(&[(0.0, 1.0), (2.0, 10.0)]), 10.0).pairs(), vec![(1.0, 2.0)]);
        assert!(complement_on(&set(&[(0.0, 10.0)]), 10.0).is_empty());
        assert_eq!(complement_on(&set(&[(0.0, 1.0), (2.0, 3.0)]), 5.0).pairs(), vec![(1.0, 2.0), (3.0, 5.0)]);
        assert_eq!(complement_on(&IntervalSet::empty(), 4.0).pairs(), vec![(0.0, 4.0)]);
        assert_eq!(complement_on(&set(&[(1.0, 2.0)]), 4.0).pairs(), vec![(0.0, 1.0), (2.0, 4.0)]);
    }

    #[test]
    fn hausdorff_examples() {
        let a = set(&[(0.0, 1.0)]);
        assert_eq!(hausdorff_distance(&a, &a, 1.0).unwrap(), 0.0);
        assert_eq!(hausdorff_distance(&a, &set(&[(0.0, 2.0)]), 2.0).unwrap(), 1.0);
        let d = hausdorff_distance(&set(&[(0.0, 1.0), (3.0, 4.0)]), &set(&[(0.0, 1.5), (3.0, 4.0)]), 4.0).unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn hausdorff_uses_gap_midpoints() {
        // The point 2 of [0,4] is 1 away from {[0,1],[3,4]}.
        let d = hausdorff_distance(&set(&[(0.0, 4.0)]), &set(&[(0.0, 1.0), (3.0, 4.0)]), 4.0).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn hausdorff_empty_window_is_an_error() {
        let a = set(&[(5.0, 6.0)]);
        assert_eq!(hausdorff_distance(&a, &a, 1.0), Err(IntervalError::EmptyInWindow(1.0)));
    }

    #[test]
    fn tail_is_clipped_to_window() {
        let s = set(&[(0.0, 1.0)]).with_tail(2.0).unwrap();
        assert_eq!(s.len(), 2);
        let clipped = s.clipped(5.0);
        assert_eq!(clipped[1], Interval::new(2.0, 5.0));
        assert_eq!(complement_on(&s, 5.0).pairs(), vec![(1.0, 2.0)]);
    }

    #[test]
    fn match_report_examples() {
        let spec = validate_gap_spec(&[(1.0, 2.0), (3.0, 4.0)], 3, 0.01, 50.0).unwrap();
        let r = gap_match_report(&[(1.001, 1.999), (3.0, 4.0)], &spec);
        assert!(r.pass);
        assert!((r.per_gap[0].edge_error - 0.002).abs() < 1e-12);
        assert_eq!(r.per_gap[1].edge_error, 0.0);

        let r = gap_match_report(&[(1.0, 2.0)], &spec);
        assert!(!r.pass);
        assert!(r.reason.unwrap().contains("expected 2"));

        let r = gap_match_report(&[(60.0, 70.0), (3.0, 4.0), (1.0, 2.0)], &spec);
        assert!(r.pass);
        assert_eq!(r.extra_gaps, vec![(60.0, 70.0)]);

        let r = gap_match_report(&[(1.0, 2.0), (3.0, 4.0), (10.0, 11.0)], &spec);
        assert!(!r.pass);
    }

    #[test]
    fn json_shapes() {
        let s = set(&[(1.0, 2.0), (3.0, 4.5)]);
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(js, "[[1.0,2.0],[3.0,4.5]]");
        let back: IntervalSet = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        let with_tail: IntervalSet = serde_json::from_str("[[0,1],[2,null]]").unwrap();
        assert_eq!(with_tail.tail(), Some(2.0));
        assert!(serde_json::from_str::<IntervalSet>("[[2,1]]").is_err());

        let spec = validate_gap_spec(&[(1.0, 2.0)], 3, 0.01, 50.0).unwrap();
        let r = gap_match_report(&[(1.0, 2.0)], &spec);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["pass"], true);
        assert_eq!(v["per_gap"][0]["edge_error"], 0.0);
        assert!(v["extra_gaps"].as_array().unwrap().is_empty());
    }
}
