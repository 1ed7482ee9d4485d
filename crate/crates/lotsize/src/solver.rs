//! Station-by-station segment DP.
//!
//! Positions are absolute: holding `x` units after period `t` is position
//! `D[t+1] + x`. After station `t` the tree describes `dp(t, x)` exactly for
//! `x` in `[0, min(B(t), W)]`, where the window `W` is `2Q` unless a query
//! asks for the full capacity.
//!
//! Each station runs:
//! 1. [`SolverState::individual_update`]: convert segments whose stored fuel
//!    is now dearer than `p1`, then remove squeezed and dominated segments.
//! 2. [`SolverState::trim_capacity`]: drop segments starting past the window
//!    and cap every reach at its end.
//! 3. [`SolverState::bulk_update_q`]: copy the block sources into a scratch
//!    tree, grant them `Q` units at `p2` with one tag and merge them behind
//!    the surviving segments.
//! 4. [`SolverState::form_boundary_state`]: drop segments that no longer
//!    serve `D[t+1]` and read `dp(t, 0)`.
//! 5. [`SolverState::apply_holding_and_demand`]: one holding tag.

use std::io::Write;

use thiserror::Error;

use crate::bst::{Forest, Handle, LazyTag, MvKind, ReachOp, PriceOp, SegmentRecord, Side, Tree};
use crate::model::{plan_cost, Fuel, Money, Plan, ValidatedInstance};
use crate::segments::{
    coverage_start, effective_reach, kill_threshold, merge_into, terminus, value_at, MergeStack,
    PriceContext, Threshold,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("no feasible plan reaches period {t}")]
    Infeasible { t: usize },
    #[error("query dp({i}, {x}) is out of range")]
    QueryOutOfRange { i: usize, x: Fuel },
    #[error("plan log is inconsistent: {0}")]
    LogCorrupt(String),
    #[error("internal check failed at station {station}: {what}")]
    Audit { station: usize, what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    /// Keep states with at most `2Q` units.
    #[default]
    DoubleBreakpoint,
    /// Keep every state the capacity allows.
    Capacity,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub window: Window,
    pub want_plan: bool,
    /// Record before/after snapshots of every structural edit.
    pub log_ops: bool,
    /// Recheck termini, MVs and key order after every station.
    pub audit: bool,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

/// Deliberate defects for checking that the harness catches them.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Grants the discount only above the breakpoint, not at it.
    BreakpointTie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Insert,
    Remove,
    Cut,
    BulkTag,
    MvChange,
    Trim,
    HoldShift,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationLogEntry {
    pub station: usize,
    pub kind: OpKind,
    pub before: Option<SegmentRecord>,
    pub after: Option<SegmentRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StationStats {
    pub station: usize,
    pub segments: usize,
    pub inserts: usize,
    pub removes: usize,
    pub cuts: usize,
    pub squeezes: usize,
    pub mv_changes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub stations: Vec<StationStats>,
}

impl Stats {
    /// Inserts, removes and cuts over the whole run.
    pub fn structural_edits(&self) -> usize {
        self.stations.iter().map(|s| s.inserts + s.removes + s.cuts).sum()
    }

    pub fn max_segments(&self) -> usize {
        self.stations.iter().map(|s| s.segments).max().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["station", "segments", "inserts", "removes", "cuts", "squeezes", "mv_changes"])?;
        for s in &self.stations {
            w.write_record(
                [s.station, s.segments, s.inserts, s.removes, s.cuts, s.squeezes, s.mv_changes]
                    .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginKind {
    Initial,
    Block,
    Cut,
}

/// How a state was produced. Its parent is used up to `parent_legacy_to`,
/// then `p1_units` are bought at `station`, then (for blocks) `block_units`
/// at the discount.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub kind: OriginKind,
    pub station: usize,
    pub anchor: Fuel,
    pub parent: usize,
    pub parent_legacy_to: Fuel,
    pub p1_units: Fuel,
    pub block_units: Fuel,
}

/// Everything [`recover_plan`] needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanLog {
    pub origins: Vec<Origin>,
    /// Origin of the state that realises the optimum, used up to
    /// `legacy_to`, topped up with `p1_units` at station `n`.
    pub last: Origin,
}

/// Snapshot handed to the observer after each station, before holding
/// costs are charged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationReport {
    pub station: usize,
    pub segments: usize,
    /// `dp(t, x)` for `x = 0..=min(B(t), W)`.
    pub window: Vec<Option<Money>>,
    /// Legacy price of the state realising each window entry.
    pub labels: Vec<Option<Money>>,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub total: Money,
    pub plan: Option<Plan>,
    pub stats: Stats,
    pub log: Vec<OperationLogEntry>,
    pub plan_log: PlanLog,
}

#[derive(Debug, Clone, Copy)]
struct Source {
    pos: Fuel,
    value: Money,
    parent: usize,
    legacy_to: Fuel,
    p1_units: Fuel,
}

/// Legacy and station-fuel split when state `r` is used up to `p`.
fn usage(r: &SegmentRecord, p: Fuel) -> (Fuel, Fuel) {
    let e = effective_reach(r);
    (p.min(e), (p - e).max(0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverState<'a> {
    inst: &'a ValidatedInstance,
    opts: SolveOptionsKey,
    forest: Forest,
    tree: Tree,
    /// Next station to build, 1-based.
    station: usize,
    dp0: Money,
    last_origin: Option<Origin>,
    origins: Vec<Origin>,
    stats: Stats,
    cur: StationStats,
    log: Vec<OperationLogEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SolveOptionsKey {
    window: Window,
    log_ops: bool,
    audit: bool,
    fault: Option<Fault>,
}

/// Fuel price context for the station being built.
#[derive(Debug, Clone, Copy)]
struct Env {
    t: usize,
    dom_lo: Fuel,
    lo: Fuel,
    u: Fuel,
    pi: Money,
    p2: Money,
    q: Fuel,
    h: Money,
}

impl<'a> SolverState<'a> {
    pub fn new(inst: &'a ValidatedInstance, opts: &SolveOptions) -> SolverState<'a> {
        let mut forest = Forest::new();
        let (tree, _) = forest.singleton(SegmentRecord::point(0, 0));
        SolverState {
            inst,
            opts: SolveOptionsKey {
                window: opts.window,
                log_ops: opts.log_ops,
                audit: opts.audit,
                fault: opts.fault,
            },
            forest,
            tree,
            station: 1,
            dp0: 0,
            last_origin: None,
            origins: vec![Origin {
                kind: OriginKind::Initial,
                station: 0,
                anchor: 0,
                parent: 0,
                parent_legacy_to: 0,
                p1_units: 0,
                block_units: 0,
            }],
            stats: Stats::default(),
            cur: StationStats::default(),
            log: Vec::new(),
        }
    }

    /// Next station to build.
    pub fn station(&self) -> usize {
        self.station
    }

    /// `dp(t, 0)` for the last station built.
    pub fn dp0(&self) -> Money {
        self.dp0
    }

    pub fn segments(&self) -> usize {
        self.forest.len(&self.tree)
    }

    pub fn records(&mut self) -> Vec<SegmentRecord> {
        self.forest.in_order(&self.tree)
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    fn env(&self, window: Window) -> Env {
        let t = self.station;
        let inst = self.inst;
        let width = match window {
            Window::DoubleBreakpoint => inst.capacity(t).min(2 * inst.q()),
            Window::Capacity => inst.capacity(t),
        };
        let lo = inst.prefix(t + 1);
        Env {
            t,
            dom_lo: inst.prefix(t),
            lo,
            u: lo + width,
            pi: inst.p1(t),
            p2: inst.p2(t),
            q: inst.q() + Fuel::from(self.opts.fault == Some(Fault::BreakpointTie)),
            h: inst.holding(t),
        }
    }

    fn ctx(env: &Env) -> PriceContext {
        PriceContext {
            station: env.t,
            p1: env.pi,
            p2: env.p2,
            q: env.q,
        }
    }

    fn rec(&mut self, h: Handle) -> SegmentRecord {
        self.forest.record(h)
    }

    fn log_op(&mut self, kind: OpKind, before: Option<SegmentRecord>, after: Option<SegmentRecord>) {
        if self.opts.log_ops {
            self.log.push(OperationLogEntry {
                station: self.station,
                kind,
                before,
                after,
            });
        }
    }

    fn remove(&mut self, h: Handle) {
        let r = self.forest.remove(&mut self.tree, h).expect("live handle");
        self.cur.removes += 1;
        self.log_op(OpKind::Remove, Some(r), None);
    }

    fn edit(&mut self, h: Handle, kind: OpKind, f: impl FnOnce(&mut SegmentRecord)) {
        let before = self.opts.log_ops.then(|| self.forest.record(h));
        self.forest.update(h, f).expect("live handle");
        if self.opts.log_ops {
            let after = self.forest.record(h);
            self.log_op(kind, before, Some(after));
        }
    }

    /// Recomputes termini, then kill thresholds, of the given nodes.
    fn refresh(&mut self, hs: &[Option<Handle>], pi: Money) {
        for h in hs.iter().flatten().copied() {
            if !self.forest.is_live(h) {
                continue;
            }
            let r = self.rec(h);
            let next = self.forest.next(h).map(|n| self.rec(n));
            let tau = terminus(&r, next.as_ref(), pi);
            if tau != r.terminus_pos {
                self.forest.update(h, |r| r.terminus_pos = tau).unwrap();
            }
        }
        for h in hs.iter().flatten().copied() {
            if !self.forest.is_live(h) {
                continue;
            }
            let r = self.rec(h);
            let (mv, kind) = match self.forest.prev(h) {
                Some(p) => kill_threshold(&self.rec(p), &r),
                None => (Threshold::Never, MvKind::Regular),
            };
            if mv != r.mv || kind != r.mv_kind {
                self.cur.mv_changes += 1;
                self.edit(h, OpKind::MvChange, |r| {
                    r.mv = mv;
                    r.mv_kind = kind;
                });
            }
        }
    }

    fn prev(&self, h: Option<Handle>) -> Option<Handle> {
        h.and_then(|h| self.forest.prev(h))
    }

    /// Cuts `h` at `p`: its stored fuel is spent up to `p`, then the state
    /// restarts there with no stored fuel.
    fn cut(&mut self, h: Handle, p: Fuel, env: &Env) {
        let r = self.rec(h);
        let value = value_at(&r, p, env.pi).expect("cut at or after anchor");
        let (legacy_to, p1_units) = usage(&r, p);
        self.origins.push(Origin {
            kind: OriginKind::Cut,
            station: env.t,
            anchor: p,
            parent: r.origin,
            parent_legacy_to: legacy_to,
            p1_units,
            block_units: 0,
        });
        let origin = self.origins.len() - 1;
        self.cur.cuts += 1;
        self.edit(h, OpKind::Cut, |r| {
            r.anchor_value = value;
            r.anchor_pos = p;
            r.legacy_reach = p;
            r.legacy_price = None;
            r.origin = origin;
        });
    }

    /// Cheapest state at `p` among the two segments bracketing it; ties go
    /// to the left one.
    fn eval(&mut self, p: Fuel, pi: Money) -> Option<(Money, SegmentRecord)> {
        let (lower, _) = self.forest.search(&self.tree, p);
        let cands = match lower {
            Some(j) => [Some(j), self.forest.next(j)],
            None => [self.forest.first(&self.tree), None],
        };
        let mut best: Option<(Money, SegmentRecord)> = None;
        for h in cands.into_iter().flatten() {
            let r = self.rec(h);
            if let Some(v) = value_at(&r, p, pi) {
                if best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, r));
                }
            }
        }
        best
    }

    /// Converts segments whose stored fuel costs more than `p1`, then
    /// removes squeezed segments and every segment whose kill threshold
    /// `p1` reaches, largest threshold first.
    pub fn individual_update(&mut self) {
        let env = self.env(self.opts.window);
        self.individual_update_in(&env);
    }

    fn individual_update_in(&mut self, env: &Env) {
        let pi = env.pi;
        let mut cur = self.forest.find_first(&self.tree, |r| r.legacy_price.is_some());
        while let Some(h) = cur {
            let r = self.rec(h);
            if !r.legacy_price.is_some_and(|l| l > pi) {
                break;
            }
            self.cut(h, r.anchor_pos.max(env.dom_lo), env);
            let (p, n) = (self.forest.prev(h), self.forest.next(h));
            self.refresh(&[p, Some(h), n], pi);
            cur = n;
        }
        loop {
            if let Some(h) = self.forest.first_squeezed(&self.tree) {
                let p1 = self.forest.prev(h);
                let p2 = self.prev(p1);
                let n = self.forest.next(h);
                self.remove(h);
                self.cur.squeezes += 1;
                self.refresh(&[p2, p1, n], pi);
                continue;
            }
            match self.forest.max_mv(&self.tree) {
                Some(m) if m.admits(pi) => {
                    let h = self.forest.find_max(&self.tree).unwrap();
                    let (p, n) = (self.forest.prev(h), self.forest.next(h));
                    self.remove(h);
                    self.refresh(&[p, n], pi);
                }
                _ => break,
            }
        }
    }

    /// Removes segments that start serving past the window end and caps
    /// every reach at it.
    pub fn trim_capacity(&mut self) {
        let env = self.env(self.opts.window);
        self.trim_in(&env);
    }

    fn trim_in(&mut self, env: &Env) {
        let pi = env.pi;
        while self.segments() > 1 {
            let z = self.forest.last(&self.tree).unwrap();
            let p = self.forest.prev(z).unwrap();
            let (pr, zr) = (self.rec(p), self.rec(z));
            let start = coverage_start(Some(&pr), &zr, pi).unwrap_or(Fuel::MAX);
            if start <= env.u {
                break;
            }
            self.remove(z);
            self.refresh(&[Some(p)], pi);
        }
        self.forest.apply_all(&self.tree, &LazyTag::cap_reach(env.u));
        self.log_op(OpKind::Trim, None, None);
        let z = self.forest.last(&self.tree);
        self.refresh(&[z], pi);
    }

    /// Block sources: the state at the arrival point and every segment
    /// anchored on the envelope inside the arrival range.
    fn sources(&mut self, env: &Env) -> Vec<Source> {
        let pi = env.pi;
        let mut out = Vec::new();
        if let Some((v, r)) = self.eval(env.dom_lo, pi) {
            let (legacy_to, p1_units) = usage(&r, env.dom_lo);
            out.push(Source {
                pos: env.dom_lo,
                value: v,
                parent: r.origin,
                legacy_to,
                p1_units,
            });
        }
        let limit = env.u - env.q;
        let dom_lo = env.dom_lo;
        let mut cur = self.forest.find_first(&self.tree, |r| r.terminus_pos >= dom_lo);
        let mut prev = self.prev(cur).map(|p| self.rec(p));
        while let Some(h) = cur {
            if prev.is_some_and(|p| p.terminus_pos >= limit) {
                break;
            }
            let r = self.rec(h);
            if r.anchor_pos > dom_lo
                && r.anchor_pos <= limit
                && coverage_start(prev.as_ref(), &r, pi).is_some_and(|c| c <= r.anchor_pos)
            {
                out.push(Source {
                    pos: r.anchor_pos,
                    value: r.anchor_value,
                    parent: r.origin,
                    legacy_to: r.anchor_pos,
                    p1_units: 0,
                });
            }
            prev = Some(r);
            cur = self.forest.next(h);
        }
        out.sort_by_key(|s| (s.pos, s.value));
        out
    }

    /// Builds the block staircase: each source receives at least `Q` units
    /// at `p2`, enough to reach the departure point. Only sources that
    /// improve on every source to their left survive.
    fn block_staircase(&mut self, env: &Env) -> Tree {
        let floor = env.lo - env.q;
        let mut keep: Vec<(SegmentRecord, Source)> = Vec::new();
        let mut best: Option<Money> = None;
        for s in self.sources(env) {
            let pos = s.pos.max(floor);
            if pos + env.q > env.u {
                continue;
            }
            let value = s.value + env.p2 * (pos - s.pos);
            let key = value - env.p2 * pos;
            if best.is_some_and(|b| key >= b) {
                continue;
            }
            best = Some(key);
            if keep.last().is_some_and(|(r, _)| r.anchor_pos == pos) {
                keep.pop();
            }
            keep.push((SegmentRecord::point(pos, value), s));
        }
        let mut x = Tree::EMPTY;
        for (mut r, s) in keep {
            self.origins.push(Origin {
                kind: OriginKind::Block,
                station: env.t,
                anchor: r.anchor_pos + env.q,
                parent: s.parent,
                parent_legacy_to: s.legacy_to,
                p1_units: s.p1_units,
                block_units: r.anchor_pos + env.q - s.pos,
            });
            r.origin = self.origins.len() - 1;
            self.forest.push_back(&mut x, r);
        }
        bulk_update_q(&mut self.forest, &x, &Self::ctx(env), env.u);
        self.log_op(OpKind::BulkTag, None, None);
        x
    }

    /// Grants the block to every source and merges the copies behind the
    /// current segments.
    pub fn bulk_update_q(&mut self) {
        let env = self.env(self.opts.window);
        self.bulk_in(&env);
    }

    fn bulk_in(&mut self, env: &Env) {
        let mut x = self.block_staircase(env);
        if x.is_empty() {
            return;
        }
        let members = self.forest.in_order(&x);
        let total = members.len();
        let survivors = merge_into(&mut TailView { st: self, pi: env.pi }, members, env.lo, &Self::ctx(env)).len();
        for _ in survivors..total {
            let (_, rest) = self.forest.extract_extreme(x, Side::Min).unwrap();
            x = rest;
        }
        let joint = self.forest.last(&self.tree);
        let added = self.forest.handles(&x);
        self.tree = self.forest.concat(self.tree, x);
        self.cur.inserts += added.len();
        if self.opts.log_ops {
            for &h in &added {
                let r = self.rec(h);
                self.log_op(OpKind::Insert, None, Some(r));
            }
        }
        let mut fix = Vec::with_capacity(added.len() + 1);
        fix.push(joint);
        fix.extend(added.into_iter().map(Some));
        self.refresh(&fix, env.pi);
    }

    /// Drops segments that no longer serve the departure point, re-anchors
    /// the first one there if its stored fuel runs out earlier, and returns
    /// `dp(t, 0)`.
    pub fn form_boundary_state(&mut self) -> Money {
        let env = self.env(self.opts.window);
        self.boundary_in(&env)
    }

    fn boundary_in(&mut self, env: &Env) -> Money {
        let (pi, lo) = (env.pi, env.lo);
        while self.segments() > 1 {
            let f = self.forest.first(&self.tree).unwrap();
            let s = self.forest.next(f).unwrap();
            let (fr, sr) = (self.rec(f), self.rec(s));
            if !coverage_start(Some(&fr), &sr, pi).is_some_and(|c| c <= lo) {
                break;
            }
            self.remove(f);
            self.refresh(&[Some(s)], pi);
        }
        let f = self.forest.first(&self.tree).unwrap();
        if self.rec(f).legacy_reach < lo {
            self.cut(f, lo, env);
            let s = self.forest.next(f);
            self.refresh(&[Some(f), s], pi);
        }
        let (v, r) = self.eval(lo, pi).expect("first segment serves the departure point");
        let (legacy_to, p1_units) = usage(&r, lo);
        self.last_origin = Some(Origin {
            kind: OriginKind::Cut,
            station: env.t,
            anchor: lo,
            parent: r.origin,
            parent_legacy_to: legacy_to,
            p1_units,
            block_units: 0,
        });
        self.dp0 = v;
        v
    }

    /// Charges holding cost on every state and moves to the next station.
    pub fn apply_holding_and_demand(&mut self) {
        let env = self.env(self.opts.window);
        if env.h != 0 {
            self.forest.apply_all(&self.tree, &LazyTag::holding(env.h, env.lo));
            self.log_op(OpKind::HoldShift, None, None);
        }
        self.cur.station = env.t;
        self.cur.segments = self.segments();
        self.stats.stations.push(std::mem::take(&mut self.cur));
        self.station += 1;
    }

    fn through_boundary(&mut self, env: &Env) -> Result<Money, SolverError> {
        if self.tree.is_empty() {
            return Err(SolverError::Infeasible { t: env.t });
        }
        self.individual_update_in(env);
        self.trim_in(env);
        self.bulk_in(env);
        let v = self.boundary_in(env);
        if self.opts.audit {
            self.audit(env)?;
        }
        Ok(v)
    }

    /// Runs the next station and returns its report.
    pub fn build_station(&mut self) -> Result<StationReport, SolverError> {
        let env = self.env(self.opts.window);
        self.through_boundary(&env)?;
        let report = self.report(&env);
        self.apply_holding_and_demand();
        Ok(report)
    }

    fn build_quiet(&mut self) -> Result<(), SolverError> {
        let env = self.env(self.opts.window);
        self.through_boundary(&env)?;
        self.apply_holding_and_demand();
        Ok(())
    }

    fn report(&mut self, env: &Env) -> StationReport {
        let width = (env.u - env.lo) as usize;
        let mut window = Vec::with_capacity(width + 1);
        let mut labels = Vec::with_capacity(width + 1);
        for x in 0..=width as Fuel {
            match self.eval(env.lo + x, env.pi) {
                Some((v, r)) => {
                    window.push(Some(v + env.h * x));
                    labels.push(r.legacy_price);
                }
                None => {
                    window.push(None);
                    labels.push(None);
                }
            }
        }
        StationReport {
            station: env.t,
            segments: self.segments(),
            window,
            labels,
        }
    }

    fn audit(&mut self, env: &Env) -> Result<(), SolverError> {
        let fail = |what: String| SolverError::Audit { station: env.t, what };
        self.forest.check_invariants(&self.tree).map_err(fail)?;
        let recs = self.records();
        for (i, r) in recs.iter().enumerate() {
            let tau = terminus(r, recs.get(i + 1), env.pi);
            if tau != r.terminus_pos {
                return Err(fail(format!("stale terminus at {i}")));
            }
            let (mv, _) = match i {
                0 => (Threshold::Never, MvKind::Regular),
                _ => kill_threshold(&recs[i - 1], r),
            };
            if mv != r.mv {
                return Err(fail(format!("stale mv at {i}")));
            }
            if mv.admits(env.pi) || r.squeezed() {
                return Err(fail(format!("dead segment left at {i}")));
            }
            if i > 0 && recs[i - 1].terminus_pos >= tau {
                return Err(fail(format!("termini not increasing at {i}")));
            }
        }
        Ok(())
    }

    pub fn plan_log(&self) -> Option<PlanLog> {
        self.last_origin.map(|last| PlanLog {
            origins: self.origins.clone(),
            last,
        })
    }

    pub fn take_log(&mut self) -> Vec<OperationLogEntry> {
        std::mem::take(&mut self.log)
    }
}

/// Grants a `Q`-unit block at `p2` to every segment of `x` with one root
/// tag: anchors move right by `Q`, values rise by `Q·p2`, and the stored
/// fuel lasts up to `reach`.
pub fn bulk_update_q(forest: &mut Forest, x: &Tree, ctx: &PriceContext, reach: Fuel) {
    let tag = LazyTag {
        position_delta: ctx.q,
        value_delta: ctx.q * ctx.p2,
        reach: ReachOp::Set(reach),
        price: PriceOp::Set {
            price: ctx.p2,
            station: ctx.station,
        },
        ..LazyTag::IDENTITY
    };
    forest.apply_all(x, &tag);
}

struct TailView<'s, 'a> {
    st: &'s mut SolverState<'a>,
    pi: Money,
}

impl MergeStack for TailView<'_, '_> {
    fn last(&mut self) -> Option<SegmentRecord> {
        let h = self.st.forest.last(&self.st.tree)?;
        Some(self.st.rec(h))
    }

    fn before_last(&mut self) -> Option<SegmentRecord> {
        let h = self.st.forest.last(&self.st.tree)?;
        let p = self.st.forest.prev(h)?;
        Some(self.st.rec(p))
    }

    fn pop_last(&mut self) {
        let h = self.st.forest.last(&self.st.tree).unwrap();
        let p = self.st.forest.prev(h);
        self.st.remove(h);
        self.st.refresh(&[p], self.pi);
    }

    fn value(&mut self, p: Fuel, pi: Money) -> Option<Money> {
        self.st.eval(p, pi).map(|(v, _)| v)
    }

    fn checkpoints(&mut self, lo: Fuel, hi: Fuel) -> Vec<Fuel> {
        let f = &mut self.st.forest;
        let mut out = Vec::new();
        let mut cur = f.find_first(&self.st.tree, |r| r.terminus_pos >= lo);
        while let Some(h) = cur {
            let tau = f.record(h).terminus_pos;
            if tau >= hi {
                break;
            }
            out.push(tau);
            cur = f.next(h);
        }
        out
    }
}

pub fn solve(inst: &ValidatedInstance, want_plan: bool) -> Result<SolveOutput, SolverError> {
    solve_with(
        inst,
        &SolveOptions {
            want_plan,
            ..SolveOptions::default()
        },
        None,
    )
}

pub fn solve_with(
    inst: &ValidatedInstance,
    opts: &SolveOptions,
    mut observer: Option<&mut dyn FnMut(&StationReport)>,
) -> Result<SolveOutput, SolverError> {
    let mut st = SolverState::new(inst, opts);
    for _ in 1..=inst.n() {
        match observer.as_mut() {
            Some(obs) => obs(&st.build_station()?),
            None => st.build_quiet()?,
        }
    }
    let plan_log = st.plan_log().expect("at least one station");
    let plan = if opts.want_plan {
        Some(recover_plan(inst, &plan_log, st.dp0)?)
    } else {
        None
    };
    Ok(SolveOutput {
        total: st.dp0,
        plan,
        stats: st.stats.clone(),
        log: st.take_log(),
        plan_log,
    })
}

/// `dp(i, x)` for any `x <= B(i)`. `state` must have built stations
/// `1..i` and is left untouched.
pub fn query_dp(state: &SolverState, i: usize, x: Fuel) -> Result<Money, SolverError> {
    let inst = state.inst;
    if i != state.station || i > inst.n() || x < 0 || x > inst.capacity(i) {
        return Err(SolverError::QueryOutOfRange { i, x });
    }
    let mut scratch = state.clone();
    scratch.opts.log_ops = false;
    let env = scratch.env(Window::Capacity);
    scratch.through_boundary(&env)?;
    let (v, _) = scratch
        .eval(env.lo + x, env.pi)
        .ok_or(SolverError::QueryOutOfRange { i, x })?;
    Ok(v + env.h * x)
}

/// Rebuilds order quantities by walking origins back from the optimum.
pub fn recover_plan(inst: &ValidatedInstance, log: &PlanLog, total: Money) -> Result<Plan, SolverError> {
    let n = inst.n();
    let mut orders = vec![0 as Fuel; n + 1];
    let corrupt = |m: &str| SolverError::LogCorrupt(m.to_string());
    let mut o = log.last;
    let mut steps = 0;
    loop {
        if o.station > n {
            return Err(corrupt("station out of range"));
        }
        orders[o.station] += o.p1_units + o.block_units;
        if o.kind == OriginKind::Initial {
            break;
        }
        let parent = *log.origins.get(o.parent).ok_or_else(|| corrupt("missing parent"))?;
        let legacy = o.parent_legacy_to - parent.anchor;
        match parent.kind {
            OriginKind::Block => orders[parent.station] += legacy,
            _ if legacy != 0 => return Err(corrupt("legacy use without stored fuel")),
            _ => {}
        }
        if legacy < 0 || o.p1_units < 0 || o.block_units < 0 {
            return Err(corrupt("negative quantity"));
        }
        o = parent;
        steps += 1;
        if steps > log.origins.len() + 1 {
            return Err(corrupt("origin cycle"));
        }
    }
    if orders[0] != 0 {
        return Err(corrupt("purchase before the first station"));
    }
    let mut plan = Plan::from_orders(inst, orders[1..].to_vec());
    let cost = plan_cost(inst, &plan).map_err(|e| SolverError::LogCorrupt(e.to_string()))?;
    if cost != total {
        return Err(SolverError::LogCorrupt(format!("plan costs {cost}, solver total is {total}")));
    }
    plan.total = total;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_instance, Instance};

    fn inst(d: &[i64], p1: &[i64], p2: &[i64], q: i64, b: &[i64], h: &[i64]) -> ValidatedInstance {
        validate_instance(Instance {
            n: d.len(),
            demand: d.to_vec(),
            price1: p1.to_vec(),
            price2: p2.to_vec(),
            breakpoint: q,
            capacity: b.to_vec(),
            holding: h.to_vec(),
        })
        .unwrap()
    }

    fn e1() -> ValidatedInstance {
        inst(&[3, 4], &[4, 3], &[2, 2], 5, &[10, 10], &[1, 0])
    }

    #[test]
    fn solve_examples() {
        assert_eq!(solve(&e1(), false).unwrap().total, 18);
        let one = inst(&[6], &[3], &[1], 8, &[5], &[0]);
        assert_eq!(solve(&one, false).unwrap().total, 18);
        let st = SolverState::new(&one, &SolveOptions::default());
        assert_eq!(query_dp(&st, 1, 2), Ok(8));
        let tight = inst(&[5], &[2], &[1], 10, &[0], &[1]);
        assert_eq!(solve(&tight, false).unwrap().total, 10);
    }

    #[test]
    fn plans_recost_to_total() {
        let out = solve(&e1(), true).unwrap();
        let plan = out.plan.unwrap();
        assert_eq!(plan.total, 18);
        assert_eq!(plan_cost(&e1(), &plan), Ok(18));
        let zero = inst(&[0, 0], &[3, 2], &[1, 1], 2, &[4, 4], &[1, 1]);
        let out = solve(&zero, true).unwrap();
        assert_eq!(out.total, 0);
        assert_eq!(out.plan.unwrap().orders, vec![0, 0]);
    }

    #[test]
    fn bulk_tag_example() {
        let mut f = Forest::new();
        let (x, h) = f.singleton(SegmentRecord::point(2, 10));
        let ctx = PriceContext { station: 1, p1: 3, p2: 2, q: 5 };
        bulk_update_q(&mut f, &x, &ctx, 9);
        let r = f.record(h);
        assert_eq!((r.anchor_pos, r.anchor_value), (7, 20));
        assert_eq!((r.legacy_price, r.legacy_reach), (Some(2), 9));
        bulk_update_q(&mut f, &Tree::EMPTY, &ctx, 9);
    }

    #[test]
    fn query_examples() {
        let e = e1();
        let mut st = SolverState::new(&e, &SolveOptions::default());
        assert_eq!(query_dp(&st, 1, 2), Ok(12));
        assert_eq!(query_dp(&st, 1, 11), Err(SolverError::QueryOutOfRange { i: 1, x: 11 }));
        let before = st.clone();
        let zero = query_dp(&st, 1, 0).unwrap();
        assert_eq!(st, before);
        st.build_station().unwrap();
        assert_eq!(zero, st.dp0());
        assert_eq!(query_dp(&st, 1, 0), Err(SolverError::QueryOutOfRange { i: 1, x: 0 }));
    }

    #[test]
    fn station_reports_match_e1_table() {
        let e = e1();
        let mut seen = Vec::new();
        let mut obs = |r: &StationReport| seen.push(r.window.clone());
        let opts = SolveOptions { audit: true, ..SolveOptions::default() };
        solve_with(&e, &opts, Some(&mut obs)).unwrap();
        assert_eq!(seen[0][0], Some(12));
        assert_eq!(seen[0][2], Some(12));
        assert_eq!(seen[1][0], Some(18));
    }

    #[test]
    fn stats_csv_has_a_row_per_station() {
        let out = solve(&e1(), false).unwrap();
        let mut buf = Vec::new();
        out.stats.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
