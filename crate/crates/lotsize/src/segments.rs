//! Segment algebra: evaluation, MV thresholds, dominance and line merging.
//!
//! A segment `(a, v, λ, e)` prices position `P >= a` as
//! `v + λ·(min(P, e) − a) + π·(P − e)⁺`, where `π` is the current regular
//! price. Without stored fuel `e = a` and the cost is `v + π·(P − a)`.

use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

use crate::bst::{MvKind, SegmentRecord};
use crate::model::{Fuel, Money};

/// Exact kill threshold. Comparing a price `c` against it decides whether
/// the segment is dominated by its left neighbour when fuel costs `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Threshold {
    Never,
    At(Ratio<i128>),
    Always,
}

impl Threshold {
    pub fn int(x: i64) -> Threshold {
        Threshold::At(Ratio::from_integer(x as i128))
    }

    pub fn ratio(num: i128, den: i128) -> Threshold {
        Threshold::At(Ratio::new(num, den))
    }

    pub fn shift(self, h: Money) -> Threshold {
        match self {
            Threshold::At(r) if h != 0 => Threshold::At(r + h as i128),
            t => t,
        }
    }

    /// True when a price of `c` reaches the threshold.
    pub fn admits(self, c: Money) -> bool {
        self >= Threshold::int(c)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Never => write!(f, "never"),
            Threshold::Always => write!(f, "always"),
            Threshold::At(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriceContext {
    pub station: usize,
    pub p1: Money,
    pub p2: Money,
    pub q: Fuel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MvResult {
    pub threshold: Ratio<i128>,
    pub kind: MvKind,
    /// Units bought at the station in the comparison; the discount needs
    /// this to be at least `Q`.
    pub quantity_condition: Option<Fuel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TerminusThresholds {
    pub regime_a: Result<MvResult, SegmentError>,
    /// Absent only when the checkpoint coincides with the left anchor.
    pub regime_b: Option<MvResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("checkpoint needs no purchase at the station")]
    DegenerateCheckpoint,
    #[error("segments do not share a slope")]
    PreconditionViolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Only stored fuel; positions past the reach are unavailable.
    LegacyOnly,
    /// Stored fuel first, then station fuel at `p1`.
    StationFuel,
}

fn has_legacy(s: &SegmentRecord) -> bool {
    s.legacy_price.is_some() && s.legacy_reach > s.anchor_pos
}

/// End of the stored fuel, or the anchor when there is none.
pub fn effective_reach(s: &SegmentRecord) -> Fuel {
    if has_legacy(s) {
        s.legacy_reach
    } else {
        s.anchor_pos
    }
}

/// Cost of reaching `p` from `s` with regular price `pi`.
pub fn value_at(s: &SegmentRecord, p: Fuel, pi: Money) -> Option<Money> {
    if p < s.anchor_pos {
        return None;
    }
    Some(match s.legacy_price {
        Some(l) if has_legacy(s) => {
            let e = s.legacy_reach;
            s.anchor_value + l * (p.min(e) - s.anchor_pos) + pi * (p - e).max(0)
        }
        _ => s.anchor_value + pi * (p - s.anchor_pos),
    })
}

pub fn eval_state(seg: &SegmentRecord, x: Fuel, ctx: &PriceContext, mode: EvalMode) -> Option<Money> {
    match mode {
        EvalMode::StationFuel => value_at(seg, x, ctx.p1),
        EvalMode::LegacyOnly if x <= effective_reach(seg) => value_at(seg, x, 0),
        EvalMode::LegacyOnly => None,
    }
}

/// Least `P >= max(a_j, a_l)` where `j` costs strictly more than `l`.
pub fn crossing(j: &SegmentRecord, l: &SegmentRecord, pi: Money) -> Option<Fuel> {
    let s = j.anchor_pos.max(l.anchor_pos);
    let mut pts = vec![s];
    for e in [effective_reach(j), effective_reach(l)] {
        if e > s {
            pts.push(e);
        }
    }
    pts.sort_unstable();
    pts.dedup();
    let diff = |p: Fuel| -> i128 {
        value_at(j, p, pi).unwrap() as i128 - value_at(l, p, pi).unwrap() as i128
    };
    for (idx, &x0) in pts.iter().enumerate() {
        let d0 = diff(x0);
        if d0 > 0 {
            return Some(x0);
        }
        let slope = diff(x0 + 1) - d0;
        if slope <= 0 {
            continue;
        }
        let p = x0 as i128 + (-d0).div_euclid(slope) + 1;
        match pts.get(idx + 1) {
            Some(&x1) if p >= x1 as i128 => {}
            _ => return Some(p as Fuel),
        }
    }
    None
}

/// Rightmost position `j` still serves, given its right neighbour.
pub fn terminus(j: &SegmentRecord, next: Option<&SegmentRecord>, pi: Money) -> Fuel {
    match next.and_then(|l| crossing(j, l, pi)) {
        Some(c) => j.legacy_reach.min(c - 1),
        None => j.legacy_reach,
    }
}

/// First position where `j` beats its left neighbour; `None` when it never
/// does. Without a left neighbour this is `Fuel::MIN`.
pub fn coverage_start(prev: Option<&SegmentRecord>, j: &SegmentRecord, pi: Money) -> Option<Fuel> {
    match prev {
        None => Some(Fuel::MIN),
        Some(k) => crossing(k, j, pi),
    }
}

pub fn regular_mv(left: &SegmentRecord, right: &SegmentRecord) -> MvResult {
    debug_assert!(right.anchor_pos > left.anchor_pos);
    MvResult {
        threshold: Ratio::new(
            (right.anchor_value - left.anchor_value) as i128,
            (right.anchor_pos - left.anchor_pos) as i128,
        ),
        kind: MvKind::Regular,
        quantity_condition: None,
    }
}

/// Thresholds for comparing `left` against `right` at the checkpoint
/// `right.anchor_pos + t`, where `right` costs `right_price` per unit up to
/// the checkpoint.
pub fn terminus_mv(
    left: &SegmentRecord,
    right: &SegmentRecord,
    t: Fuel,
    right_price: Money,
    _ctx: &PriceContext,
) -> TerminusThresholds {
    let l = (right.anchor_pos - left.anchor_pos + t) as i128;
    let residual = if has_legacy(left) {
        left.legacy_residual() as i128
    } else {
        0
    };
    let a = l.min(residual);
    let lp = left.legacy_price.unwrap_or(0) as i128;
    let target = right.anchor_value as i128 + t as i128 * right_price as i128;
    let base = left.anchor_value as i128;
    let kind = if t > 0 || a > 0 {
        MvKind::Terminus
    } else {
        MvKind::Regular
    };
    let regime_a = if l == a {
        Err(SegmentError::DegenerateCheckpoint)
    } else {
        Ok(MvResult {
            threshold: Ratio::new(target - base - a * lp, l - a),
            kind,
            quantity_condition: Some((l - a) as Fuel),
        })
    };
    let regime_b = (l != 0).then(|| MvResult {
        threshold: Ratio::new(target - base, l),
        kind,
        quantity_condition: Some(l as Fuel),
    });
    TerminusThresholds { regime_a, regime_b }
}

/// Price at or above which `j` is dominated by its left neighbour `k`
/// everywhere `j` serves.
pub fn kill_threshold(k: &SegmentRecord, j: &SegmentRecord) -> (Threshold, MvKind) {
    let tau = j.terminus_pos;
    if k.anchor_pos > tau {
        return (Threshold::Never, MvKind::Regular);
    }
    if j.squeezed() {
        return (Threshold::Always, MvKind::Terminus);
    }
    let t = tau - j.anchor_pos;
    let rp = j.legacy_price.unwrap_or(0);
    let ctx = PriceContext {
        station: 0,
        p1: 0,
        p2: 0,
        q: 1,
    };
    let thr = terminus_mv(k, j, t, rp, &ctx);
    match thr.regime_a {
        Ok(r) => (Threshold::At(r.threshold), r.kind),
        Err(_) => {
            let c_k = value_at(k, tau, 0).unwrap();
            let f_j = value_at(j, tau, 0).unwrap();
            let w = if c_k <= f_j {
                Threshold::Always
            } else {
                Threshold::Never
            };
            (w, MvKind::Terminus)
        }
    }
}

pub fn shift_mv_for_holding(mv: MvResult, h: Money) -> MvResult {
    MvResult {
        threshold: mv.threshold + h as i128,
        ..mv
    }
}

fn admits_result(r: &MvResult, c: Money) -> bool {
    Ratio::from_integer(c as i128) <= r.threshold
}

/// Whether `left` is no more expensive than `right` at right's terminus
/// when the fuel bought there costs `comparator_price`.
pub fn dominates_at_terminus(
    left: &SegmentRecord,
    right: &SegmentRecord,
    comparator_price: Money,
    ctx: &PriceContext,
) -> bool {
    let t = right.terminus_pos - right.anchor_pos;
    let rp = right.legacy_price.unwrap_or(ctx.p2);
    let thr = terminus_mv(left, right, t, rp, ctx);
    let pick = |c: Money| -> Option<MvResult> {
        let use_a = has_legacy(left) && c >= left.legacy_price.unwrap();
        match (use_a, thr.regime_a) {
            (true, Ok(r)) => Some(r),
            _ => thr.regime_b,
        }
    };
    let Some(r) = pick(comparator_price) else {
        return left.anchor_value as i128 <= right.anchor_value as i128 + t as i128 * rp as i128;
    };
    let discounted = comparator_price == ctx.p2 && ctx.p2 < ctx.p1;
    if discounted && r.quantity_condition.is_some_and(|q| q < ctx.q) {
        return pick(ctx.p1).is_some_and(|r| admits_result(&r, ctx.p1));
    }
    admits_result(&r, comparator_price)
}

/// Dominance between segments that fill `right`'s range at one price.
pub fn dominates_equal_slope(
    left: &SegmentRecord,
    right: &SegmentRecord,
    price: Money,
) -> Result<bool, SegmentError> {
    let slope = |s: &SegmentRecord| match s.legacy_price {
        Some(l) if s.legacy_reach > right.anchor_pos => l,
        _ => price,
    };
    if slope(left) != slope(right) || has_legacy(right) && right.legacy_price != Some(price) {
        return Err(SegmentError::PreconditionViolated);
    }
    let reach = value_at(left, right.anchor_pos, price).ok_or(SegmentError::PreconditionViolated)?;
    Ok(reach <= right.anchor_value)
}

/// Affine cost `intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Line {
    pub slope: Money,
    pub intercept: Money,
}

impl Line {
    pub fn at(&self, x: Fuel) -> i128 {
        self.intercept as i128 + self.slope as i128 * x as i128
    }
}

/// Rightmost grid point of `[a, b]` where `r` is no dearer than `x`;
/// parallel lines need `r` strictly cheaper.
pub fn rightmost_cheaper_point(r: Line, x: Line, a: Fuel, b: Fuel) -> Option<Fuel> {
    if a > b {
        return None;
    }
    if r.slope == x.slope {
        return (r.at(b) < x.at(b)).then_some(b);
    }
    if r.at(b) <= x.at(b) {
        return Some(b);
    }
    if r.slope < x.slope {
        return None;
    }
    // r is steeper and dearer at b: the answer is floor of the crossing.
    let num = x.intercept as i128 - r.intercept as i128;
    let den = (r.slope - x.slope) as i128;
    let p = num.div_euclid(den);
    let p = p.min(b as i128) as Fuel;
    (p >= a && r.at(p) <= x.at(p)).then_some(p)
}

/// Tail access to an ordered segment list.
pub trait MergeStack {
    fn last(&mut self) -> Option<SegmentRecord>;
    fn before_last(&mut self) -> Option<SegmentRecord>;
    fn pop_last(&mut self);
    /// Lower envelope of the list at `p`.
    fn value(&mut self, p: Fuel, pi: Money) -> Option<Money>;
    /// Positions in `[lo, hi)` after which the envelope may jump down.
    fn checkpoints(&mut self, lo: Fuel, hi: Fuel) -> Vec<Fuel>;
}

impl MergeStack for Vec<SegmentRecord> {
    fn last(&mut self) -> Option<SegmentRecord> {
        self.as_slice().last().copied()
    }
    fn before_last(&mut self) -> Option<SegmentRecord> {
        self.len().checked_sub(2).map(|i| self[i])
    }
    fn pop_last(&mut self) {
        self.pop();
    }
    fn value(&mut self, p: Fuel, pi: Money) -> Option<Money> {
        staircase_value(self, p, pi)
    }
    fn checkpoints(&mut self, lo: Fuel, hi: Fuel) -> Vec<Fuel> {
        self.iter().map(|s| s.anchor_pos - 1).filter(|&p| lo <= p && p < hi).collect()
    }
}

/// Cheapest member of a bulk staircase at `p`.
pub fn staircase_value(x: &[SegmentRecord], p: Fuel, pi: Money) -> Option<Money> {
    x.iter().filter_map(|b| value_at(b, p, pi)).min()
}

/// Merges the staircase `x` behind the segments in `r`: pops every tail
/// segment that `x` undercuts where it starts serving (clipped to
/// `band_lo`), then drops leading members of `x` that never win. Returns
/// the members to append.
pub fn merge_into<S: MergeStack>(r: &mut S, x: Vec<SegmentRecord>, band_lo: Fuel, ctx: &PriceContext) -> Vec<SegmentRecord> {
    let pi = ctx.p1;
    if x.is_empty() {
        return x;
    }
    while let Some(z) = r.last() {
        let prev = r.before_last();
        let start = coverage_start(prev.as_ref(), &z, pi).unwrap_or(Fuel::MAX);
        let s0 = start.max(band_lo);
        let ours = value_at(&z, s0, pi);
        let theirs = staircase_value(&x, s0, pi);
        let beaten = match (theirs, ours) {
            (Some(g), Some(f)) => g < f,
            (Some(_), None) => true,
            _ => false,
        };
        if !beaten {
            break;
        }
        r.pop_last();
    }
    // Member `i` is cheapest at most on `[a_i, a_{i+1})`. Between jumps of
    // the old envelope the gap to the member only grows, so it wins
    // somewhere iff it wins at a jump or at the end.
    let mut first = 0;
    while first < x.len() {
        let end = match x.get(first + 1) {
            Some(nx) => nx.anchor_pos - 1,
            None => effective_reach(&x[first]),
        };
        let mut points = r.checkpoints(x[first].anchor_pos, end);
        points.push(end);
        let wins = points.into_iter().any(|p| match (value_at(&x[first], p, pi), r.value(p, pi)) {
            (Some(g), Some(f)) => g < f,
            (Some(_), None) => true,
            _ => false,
        });
        if wins {
            break;
        }
        first += 1;
    }
    x[first..].to_vec()
}

pub fn line_merge_band(
    r_band: Vec<SegmentRecord>,
    x: Vec<SegmentRecord>,
    band_lo: Fuel,
    ctx: &PriceContext,
) -> (Vec<SegmentRecord>, Vec<SegmentRecord>) {
    let mut r = r_band;
    let x = merge_into(&mut r, x, band_lo, ctx);
    (r, x)
}
