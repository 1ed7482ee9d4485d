//! Height-balanced search tree over segments with lazy tags.
//!
//! Nodes live in a [`Forest`] arena; a [`Tree`] is just a root index, so
//! splitting and joining never copy records. Every node caches its subtree
//! size, height, the largest MV (leftmost on ties) and whether any segment in
//! the subtree is squeezed (terminus left of its anchor).
//!
//! Tags follow the usual convention: a node's own record and aggregates
//! already include its tag, which is still pending for the children.

use std::io::Write;

use thiserror::Error;

use crate::model::{Fuel, Money};
use crate::segments::Threshold;

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MvKind {
    Regular,
    Terminus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentRecord {
    pub anchor_pos: Fuel,
    pub anchor_value: Money,
    pub terminus_pos: Fuel,
    pub mv: Threshold,
    pub mv_kind: MvKind,
    /// Unit price of the stored discounted fuel, if any.
    pub legacy_price: Option<Money>,
    /// Absolute position up to which the stored fuel lasts.
    pub legacy_reach: Fuel,
    pub last_bulk_station: Option<usize>,
    /// Opaque tag for the caller, carried through every operation.
    pub origin: usize,
}

impl SegmentRecord {
    /// A segment without stored fuel, anchored at `pos`.
    pub fn point(pos: Fuel, value: Money) -> SegmentRecord {
        SegmentRecord {
            anchor_pos: pos,
            anchor_value: value,
            terminus_pos: pos,
            mv: Threshold::Never,
            mv_kind: MvKind::Regular,
            legacy_price: None,
            legacy_reach: pos,
            last_bulk_station: None,
            origin: 0,
        }
    }

    pub fn legacy_residual(&self) -> Fuel {
        self.legacy_reach - self.anchor_pos
    }

    pub fn squeezed(&self) -> bool {
        self.terminus_pos < self.anchor_pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReachOp {
    /// `reach = max(anchor, min(reach + position_delta, cap))`.
    Shift { cap: Option<Fuel> },
    /// `reach = max(anchor, x)`.
    Set(Fuel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriceOp {
    Keep,
    /// Adds to an existing legacy price.
    Add(Money),
    /// Overrides the legacy price and records the granting station.
    Set { price: Money, station: usize },
}

/// A pending update: applying it to a record performs, in order, the value
/// change (using the old anchor), the position shift, the reach update, the
/// MV shift and the price update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LazyTag {
    pub position_delta: Fuel,
    pub value_delta: Money,
    pub value_slope_delta: Money,
    pub mv_delta: Money,
    pub reach: ReachOp,
    pub price: PriceOp,
}

impl Default for LazyTag {
    fn default() -> Self {
        LazyTag::IDENTITY
    }
}

impl LazyTag {
    pub const IDENTITY: LazyTag = LazyTag {
        position_delta: 0,
        value_delta: 0,
        value_slope_delta: 0,
        mv_delta: 0,
        reach: ReachOp::Shift { cap: None },
        price: PriceOp::Keep,
    };

    pub fn is_identity(&self) -> bool {
        *self == LazyTag::IDENTITY
    }

    pub fn value_shift(d: Money) -> LazyTag {
        LazyTag {
            value_delta: d,
            ..LazyTag::IDENTITY
        }
    }

    pub fn position_shift(d: Fuel) -> LazyTag {
        LazyTag {
            position_delta: d,
            ..LazyTag::IDENTITY
        }
    }

    pub fn mv_shift(d: Money) -> LazyTag {
        LazyTag {
            mv_delta: d,
            ..LazyTag::IDENTITY
        }
    }

    /// Holding cost `h` per unit carried past position `lo`.
    pub fn holding(h: Money, lo: Fuel) -> LazyTag {
        LazyTag {
            value_delta: -h * lo,
            value_slope_delta: h,
            mv_delta: h,
            price: PriceOp::Add(h),
            ..LazyTag::IDENTITY
        }
    }

    pub fn cap_reach(cap: Fuel) -> LazyTag {
        LazyTag {
            reach: ReachOp::Shift { cap: Some(cap) },
            ..LazyTag::IDENTITY
        }
    }

    pub fn price_override(price: Money, station: usize) -> LazyTag {
        LazyTag {
            price: PriceOp::Set { price, station },
            ..LazyTag::IDENTITY
        }
    }

    /// Grants stored fuel at `price` from `station` lasting up to `reach`.
    pub fn grant_block(reach: Fuel, price: Money, station: usize) -> LazyTag {
        LazyTag {
            reach: ReachOp::Set(reach),
            price: PriceOp::Set { price, station },
            ..LazyTag::IDENTITY
        }
    }

    pub fn apply(&self, r: &mut SegmentRecord) {
        r.anchor_value += self.value_slope_delta * r.anchor_pos + self.value_delta;
        r.anchor_pos += self.position_delta;
        r.terminus_pos += self.position_delta;
        r.legacy_reach = match self.reach {
            ReachOp::Shift { cap } => {
                let moved = r.legacy_reach + self.position_delta;
                r.anchor_pos.max(cap.map_or(moved, |c| moved.min(c)))
            }
            ReachOp::Set(x) => r.anchor_pos.max(x),
        };
        r.mv = r.mv.shift(self.mv_delta);
        match self.price {
            PriceOp::Keep => {}
            PriceOp::Add(d) => r.legacy_price = r.legacy_price.map(|p| p + d),
            PriceOp::Set { price, station } => {
                r.legacy_price = Some(price);
                r.last_bulk_station = Some(station);
            }
        }
    }
}

/// The tag equivalent to applying `a` and then `b`.
pub fn compose_tags(a: &LazyTag, b: &LazyTag) -> LazyTag {
    let reach = match (a.reach, b.reach) {
        (_, ReachOp::Set(x)) => ReachOp::Set(x),
        (ReachOp::Shift { cap: c1 }, ReachOp::Shift { cap: c2 }) => {
            let moved = c1.map(|c| c + b.position_delta);
            ReachOp::Shift {
                cap: match (moved, c2) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, None) => x,
                    (None, y) => y,
                },
            }
        }
        (ReachOp::Set(x), ReachOp::Shift { cap }) => {
            let moved = x + b.position_delta;
            ReachOp::Set(cap.map_or(moved, |c| moved.min(c)))
        }
    };
    let price = match (a.price, b.price) {
        (p, PriceOp::Keep) => p,
        (_, PriceOp::Set { price, station }) => PriceOp::Set { price, station },
        (PriceOp::Keep, PriceOp::Add(d)) => PriceOp::Add(d),
        (PriceOp::Add(d1), PriceOp::Add(d2)) => PriceOp::Add(d1 + d2),
        (PriceOp::Set { price, station }, PriceOp::Add(d)) => PriceOp::Set {
            price: price + d,
            station,
        },
    };
    LazyTag {
        position_delta: a.position_delta + b.position_delta,
        value_delta: a.value_delta + b.value_delta + b.value_slope_delta * a.position_delta,
        value_slope_delta: a.value_slope_delta + b.value_slope_delta,
        mv_delta: a.mv_delta + b.mv_delta,
        reach,
        price,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BstError {
    #[error("a node with terminus {0} already exists")]
    DuplicateKey(Fuel),
    #[error("handle refers to a removed node or another tree")]
    StaleHandle,
    #[error("tree is empty")]
    EmptyTree,
    #[error("left tree keys are not all below right tree keys")]
    KeyRangesOverlap,
}

/// Stable reference to a node; invalidated when the node is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Handle {
    idx: u32,
    gen: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tree {
    root: u32,
}

impl Default for Tree {
    fn default() -> Self {
        Tree::EMPTY
    }
}

impl Tree {
    pub const EMPTY: Tree = Tree { root: NIL };

    pub fn is_empty(&self) -> bool {
        self.root == NIL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Node {
    rec: SegmentRecord,
    tag: LazyTag,
    left: u32,
    right: u32,
    parent: u32,
    height: u32,
    size: u32,
    max_mv: Threshold,
    max_node: u32,
    any_squeezed: bool,
    gen: u32,
    alive: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Forest {
    nodes: Vec<Node>,
    free: Vec<u32>,
}

impl Forest {
    pub fn new() -> Forest {
        Forest::default()
    }

    /// Number of live nodes across all trees.
    pub fn live(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    fn alloc(&mut self, rec: SegmentRecord) -> u32 {
        let fresh = |gen| Node {
            rec,
            tag: LazyTag::IDENTITY,
            left: NIL,
            right: NIL,
            parent: NIL,
            height: 1,
            size: 1,
            max_mv: rec.mv,
            max_node: NIL,
            any_squeezed: rec.squeezed(),
            gen,
            alive: true,
        };
        let x = match self.free.pop() {
            Some(x) => {
                let gen = self.nodes[x as usize].gen;
                self.nodes[x as usize] = fresh(gen);
                x
            }
            None => {
                self.nodes.push(fresh(0));
                (self.nodes.len() - 1) as u32
            }
        };
        self.nodes[x as usize].max_node = x;
        x
    }

    fn release(&mut self, x: u32) -> SegmentRecord {
        let n = &mut self.nodes[x as usize];
        n.alive = false;
        n.gen = n.gen.wrapping_add(1);
        self.free.push(x);
        n.rec
    }

    fn n(&self, x: u32) -> &Node {
        &self.nodes[x as usize]
    }

    fn nm(&mut self, x: u32) -> &mut Node {
        &mut self.nodes[x as usize]
    }

    fn height(&self, x: u32) -> u32 {
        if x == NIL {
            0
        } else {
            self.n(x).height
        }
    }

    fn size(&self, x: u32) -> u32 {
        if x == NIL {
            0
        } else {
            self.n(x).size
        }
    }

    fn handle(&self, x: u32) -> Handle {
        Handle {
            idx: x,
            gen: self.n(x).gen,
        }
    }

    fn resolve(&self, h: Handle) -> Result<u32, BstError> {
        match self.nodes.get(h.idx as usize) {
            Some(n) if n.alive && n.gen == h.gen => Ok(h.idx),
            _ => Err(BstError::StaleHandle),
        }
    }

    fn apply_node(&mut self, x: u32, tag: &LazyTag) {
        if x == NIL {
            return;
        }
        let n = self.nm(x);
        tag.apply(&mut n.rec);
        n.tag = compose_tags(&n.tag, tag);
        n.max_mv = n.max_mv.shift(tag.mv_delta);
    }

    fn push(&mut self, x: u32) {
        let tag = self.n(x).tag;
        if tag.is_identity() {
            return;
        }
        let (l, r) = (self.n(x).left, self.n(x).right);
        self.apply_node(l, &tag);
        self.apply_node(r, &tag);
        self.nm(x).tag = LazyTag::IDENTITY;
    }

    /// Recomputes aggregates of `x` from its children; `x` must be pushed.
    fn pull(&mut self, x: u32) {
        let (l, r) = (self.n(x).left, self.n(x).right);
        let mut size = 1;
        let mut height = 0;
        let mut squeezed = self.n(x).rec.squeezed();
        let mut best = (Threshold::Never, NIL);
        if l != NIL {
            let ln = self.n(l);
            size += ln.size;
            height = ln.height;
            squeezed |= ln.any_squeezed;
            best = (ln.max_mv, ln.max_node);
        }
        let own = self.n(x).rec.mv;
        if best.1 == NIL || own > best.0 {
            best = (own, x);
        }
        if r != NIL {
            let rn = self.n(r);
            size += rn.size;
            height = height.max(rn.height);
            squeezed |= rn.any_squeezed;
            if rn.max_mv > best.0 {
                best = (rn.max_mv, rn.max_node);
            }
        }
        if l != NIL {
            self.nm(l).parent = x;
        }
        if r != NIL {
            self.nm(r).parent = x;
        }
        let n = self.nm(x);
        n.size = size;
        n.height = height + 1;
        n.any_squeezed = squeezed;
        n.max_mv = best.0;
        n.max_node = best.1;
    }

    fn rotate_left(&mut self, x: u32) -> u32 {
        let y = self.n(x).right;
        self.push(y);
        let yl = self.n(y).left;
        self.nm(x).right = yl;
        self.pull(x);
        self.nm(y).left = x;
        self.pull(y);
        y
    }

    fn rotate_right(&mut self, x: u32) -> u32 {
        let y = self.n(x).left;
        self.push(y);
        let yr = self.n(y).right;
        self.nm(x).left = yr;
        self.pull(x);
        self.nm(y).right = x;
        self.pull(y);
        y
    }

    /// Restores balance at `x` (already pushed) after one side changed by
    /// at most two levels.
    fn rebalance(&mut self, x: u32) -> u32 {
        let (l, r) = (self.n(x).left, self.n(x).right);
        let (hl, hr) = (self.height(l), self.height(r));
        if hl > hr + 1 {
            self.push(l);
            if self.height(self.n(l).left) < self.height(self.n(l).right) {
                let nl = self.rotate_left(l);
                self.nm(x).left = nl;
            }
            self.rotate_right(x)
        } else if hr > hl + 1 {
            self.push(r);
            if self.height(self.n(r).right) < self.height(self.n(r).left) {
                let nr = self.rotate_right(r);
                self.nm(x).right = nr;
            }
            self.rotate_left(x)
        } else {
            self.pull(x);
            x
        }
    }

    /// Joins `l`, the detached singleton `m` and `r`, in that order.
    fn join_mid(&mut self, l: u32, m: u32, r: u32) -> u32 {
        let (hl, hr) = (self.height(l), self.height(r));
        if hl > hr + 1 {
            self.push(l);
            let lr = self.n(l).right;
            let nr = self.join_mid(lr, m, r);
            self.nm(l).right = nr;
            self.rebalance(l)
        } else if hr > hl + 1 {
            self.push(r);
            let rl = self.n(r).left;
            let nl = self.join_mid(l, m, rl);
            self.nm(r).left = nl;
            self.rebalance(r)
        } else {
            let n = self.nm(m);
            n.left = l;
            n.right = r;
            self.pull(m);
            m
        }
    }

    fn join2(&mut self, l: u32, r: u32) -> u32 {
        if l == NIL {
            return r;
        }
        if r == NIL {
            return l;
        }
        if self.height(l) > self.height(r) {
            let (m, rest) = self.extract_max_node(l);
            self.join_mid(rest, m, r)
        } else {
            let (m, rest) = self.extract_min_node(r);
            self.join_mid(l, m, rest)
        }
    }

    fn detach(&mut self, x: u32) {
        let n = self.nm(x);
        n.left = NIL;
        n.right = NIL;
        n.parent = NIL;
    }

    fn extract_min_node(&mut self, x: u32) -> (u32, u32) {
        self.push(x);
        let l = self.n(x).left;
        if l == NIL {
            let r = self.n(x).right;
            self.detach(x);
            self.pull(x);
            return (x, r);
        }
        let (m, nl) = self.extract_min_node(l);
        self.nm(x).left = nl;
        (m, self.rebalance(x))
    }

    fn extract_max_node(&mut self, x: u32) -> (u32, u32) {
        self.push(x);
        let r = self.n(x).right;
        if r == NIL {
            let l = self.n(x).left;
            self.detach(x);
            self.pull(x);
            return (x, l);
        }
        let (m, nr) = self.extract_max_node(r);
        self.nm(x).right = nr;
        (m, self.rebalance(x))
    }

    /// Splits so that the left part holds every node with `goes_left`.
    /// The predicate must be monotone (true then false) in order.
    fn split_by(&mut self, x: u32, goes_left: &mut dyn FnMut(&SegmentRecord) -> bool) -> (u32, u32) {
        if x == NIL {
            return (NIL, NIL);
        }
        self.push(x);
        let (l, r) = (self.n(x).left, self.n(x).right);
        self.detach(x);
        if goes_left(&self.n(x).rec) {
            let (a, b) = self.split_by(r, goes_left);
            (self.join_mid(l, x, a), b)
        } else {
            let (a, b) = self.split_by(l, goes_left);
            (a, self.join_mid(b, x, r))
        }
    }

    /// Splits off the first `k` nodes.
    fn split_rank(&mut self, x: u32, k: u32) -> (u32, u32) {
        if x == NIL {
            return (NIL, NIL);
        }
        self.push(x);
        let (l, r) = (self.n(x).left, self.n(x).right);
        let ls = self.size(l);
        self.detach(x);
        if k <= ls {
            let (a, b) = self.split_rank(l, k);
            (a, self.join_mid(b, x, r))
        } else {
            let (a, b) = self.split_rank(r, k - ls - 1);
            (self.join_mid(l, x, a), b)
        }
    }

    fn set_root(&mut self, t: &mut Tree, x: u32) {
        if x != NIL {
            self.nm(x).parent = NIL;
        }
        t.root = x;
    }

    fn root_of(&self, mut x: u32) -> u32 {
        while self.n(x).parent != NIL {
            x = self.n(x).parent;
        }
        x
    }

    fn owned(&self, t: &Tree, h: Handle) -> Result<u32, BstError> {
        let x = self.resolve(h)?;
        if self.root_of(x) != t.root {
            return Err(BstError::StaleHandle);
        }
        Ok(x)
    }

    fn rank_of(&self, mut x: u32) -> u32 {
        let mut r = self.size(self.n(x).left);
        while self.n(x).parent != NIL {
            let p = self.n(x).parent;
            if self.n(p).right == x {
                r += self.size(self.n(p).left) + 1;
            }
            x = p;
        }
        r
    }

    /// Pushes every tag from the root down to and including `x`.
    fn push_path(&mut self, x: u32) {
        let mut path = Vec::with_capacity(48);
        let mut y = x;
        while y != NIL {
            path.push(y);
            y = self.n(y).parent;
        }
        for &y in path.iter().rev() {
            self.push(y);
        }
    }

    fn pull_path(&mut self, mut x: u32) {
        while x != NIL {
            self.pull(x);
            x = self.n(x).parent;
        }
    }

    // ----- public operations -----

    pub fn len(&self, t: &Tree) -> usize {
        self.size(t.root) as usize
    }

    pub fn tree_height(&self, t: &Tree) -> u32 {
        self.height(t.root)
    }

    pub fn singleton(&mut self, rec: SegmentRecord) -> (Tree, Handle) {
        let x = self.alloc(rec);
        (Tree { root: x }, self.handle(x))
    }

    /// Inserts by terminus; fails if the key is already present.
    pub fn insert(&mut self, t: &mut Tree, rec: SegmentRecord) -> Result<Handle, BstError> {
        if let (Some(h), _) = self.search(t, rec.terminus_pos) {
            if self.record(h).terminus_pos == rec.terminus_pos {
                return Err(BstError::DuplicateKey(rec.terminus_pos));
            }
        }
        Ok(self.insert_multi(t, rec))
    }

    /// Inserts by terminus, placing the record after any equal keys.
    pub fn insert_multi(&mut self, t: &mut Tree, rec: SegmentRecord) -> Handle {
        let key = rec.terminus_pos;
        let (l, r) = self.split_by(t.root, &mut |n| n.terminus_pos <= key);
        let m = self.alloc(rec);
        let root = self.join_mid(l, m, r);
        self.set_root(t, root);
        self.handle(m)
    }

    /// Inserts at in-order position `rank`, ignoring keys.
    pub fn insert_at(&mut self, t: &mut Tree, rank: usize, rec: SegmentRecord) -> Handle {
        let (l, r) = self.split_rank(t.root, rank as u32);
        let m = self.alloc(rec);
        let root = self.join_mid(l, m, r);
        self.set_root(t, root);
        self.handle(m)
    }

    pub fn push_back(&mut self, t: &mut Tree, rec: SegmentRecord) -> Handle {
        let n = self.len(t);
        self.insert_at(t, n, rec)
    }

    pub fn remove(&mut self, t: &mut Tree, h: Handle) -> Result<SegmentRecord, BstError> {
        let x = self.owned(t, h)?;
        let k = self.rank_of(x);
        let (a, b) = self.split_rank(t.root, k);
        let (m, c) = self.split_rank(b, 1);
        debug_assert_eq!(m, x);
        let root = self.join2(a, c);
        self.set_root(t, root);
        Ok(self.release(m))
    }

    /// Greatest key `<= x` and least key `> x`.
    pub fn search(&mut self, t: &Tree, x: Fuel) -> (Option<Handle>, Option<Handle>) {
        let (mut lower, mut upper) = (NIL, NIL);
        let mut y = t.root;
        while y != NIL {
            self.push(y);
            if self.n(y).rec.terminus_pos <= x {
                lower = y;
                y = self.n(y).right;
            } else {
                upper = y;
                y = self.n(y).left;
            }
        }
        let h = |x: u32| (x != NIL).then(|| self.handle(x));
        (h(lower), h(upper))
    }

    /// Effective record of `h`.
    pub fn record(&mut self, h: Handle) -> SegmentRecord {
        let x = self.resolve(h).expect("stale handle");
        self.push_path(x);
        self.n(x).rec
    }

    pub fn try_record(&mut self, h: Handle) -> Result<SegmentRecord, BstError> {
        let x = self.resolve(h)?;
        self.push_path(x);
        Ok(self.n(x).rec)
    }

    /// Edits a record in place. The caller keeps keys ordered.
    pub fn update(&mut self, h: Handle, f: impl FnOnce(&mut SegmentRecord)) -> Result<(), BstError> {
        let x = self.resolve(h)?;
        self.push_path(x);
        f(&mut self.nm(x).rec);
        self.pull_path(x);
        Ok(())
    }

    pub fn change_mv(&mut self, h: Handle, w: Threshold, kind: MvKind) -> Result<(), BstError> {
        self.update(h, |r| {
            r.mv = w;
            r.mv_kind = kind;
        })
    }

    pub fn find_max(&self, t: &Tree) -> Option<Handle> {
        (t.root != NIL).then(|| self.handle(self.n(t.root).max_node))
    }

    pub fn max_mv(&self, t: &Tree) -> Option<Threshold> {
        (t.root != NIL).then(|| self.n(t.root).max_mv)
    }

    pub fn remove_max(&mut self, t: &mut Tree) -> Result<SegmentRecord, BstError> {
        let h = self.find_max(t).ok_or(BstError::EmptyTree)?;
        self.remove(t, h)
    }

    /// Leftmost node whose terminus lies left of its anchor.
    pub fn first_squeezed(&mut self, t: &Tree) -> Option<Handle> {
        let mut y = t.root;
        if y == NIL || !self.n(y).any_squeezed {
            return None;
        }
        loop {
            self.push(y);
            let l = self.n(y).left;
            if l != NIL && self.n(l).any_squeezed {
                y = l;
            } else if self.n(y).rec.squeezed() {
                return Some(self.handle(y));
            } else {
                y = self.n(y).right;
            }
        }
    }

    /// First node satisfying a predicate that is monotone in order.
    pub fn find_first(&mut self, t: &Tree, pred: impl Fn(&SegmentRecord) -> bool) -> Option<Handle> {
        let mut y = t.root;
        let mut found = NIL;
        while y != NIL {
            self.push(y);
            if pred(&self.n(y).rec) {
                found = y;
                y = self.n(y).left;
            } else {
                y = self.n(y).right;
            }
        }
        (found != NIL).then(|| self.handle(found))
    }

    /// Applies `tag` to every node with terminus `< x`.
    pub fn range_apply(&mut self, t: &mut Tree, x: Fuel, tag: &LazyTag) {
        let (l, r) = self.split_by(t.root, &mut |n| n.terminus_pos < x);
        self.apply_node(l, tag);
        let root = self.join2(l, r);
        self.set_root(t, root);
    }

    pub fn apply_all(&mut self, t: &Tree, tag: &LazyTag) {
        self.apply_node(t.root, tag);
    }

    /// Left part holds keys `<= x`.
    pub fn split(&mut self, t: Tree, x: Fuel) -> (Tree, Tree) {
        let (l, r) = self.split_by(t.root, &mut |n| n.terminus_pos <= x);
        let (mut a, mut b) = (Tree::EMPTY, Tree::EMPTY);
        self.set_root(&mut a, l);
        self.set_root(&mut b, r);
        (a, b)
    }

    /// Splits off the first `k` nodes in order.
    pub fn split_at(&mut self, t: Tree, k: usize) -> (Tree, Tree) {
        let (l, r) = self.split_rank(t.root, k as u32);
        let (mut a, mut b) = (Tree::EMPTY, Tree::EMPTY);
        self.set_root(&mut a, l);
        self.set_root(&mut b, r);
        (a, b)
    }

    pub fn join(&mut self, l: Tree, r: Tree) -> Result<Tree, BstError> {
        if let (Some(a), Some(b)) = (self.last(&l), self.first(&r)) {
            if self.record(a).terminus_pos >= self.record(b).terminus_pos {
                return Err(BstError::KeyRangesOverlap);
            }
        }
        Ok(self.concat(l, r))
    }

    /// Joins ignoring keys.
    pub fn concat(&mut self, l: Tree, r: Tree) -> Tree {
        let root = self.join2(l.root, r.root);
        let mut t = Tree::EMPTY;
        self.set_root(&mut t, root);
        t
    }

    pub fn extract_extreme(&mut self, t: Tree, side: Side) -> Result<(SegmentRecord, Tree), BstError> {
        if t.root == NIL {
            return Err(BstError::EmptyTree);
        }
        let (m, rest) = match side {
            Side::Min => self.extract_min_node(t.root),
            Side::Max => self.extract_max_node(t.root),
        };
        let mut out = Tree::EMPTY;
        self.set_root(&mut out, rest);
        Ok((self.release(m), out))
    }

    pub fn first(&self, t: &Tree) -> Option<Handle> {
        let mut y = t.root;
        if y == NIL {
            return None;
        }
        while self.n(y).left != NIL {
            y = self.n(y).left;
        }
        Some(self.handle(y))
    }

    pub fn last(&self, t: &Tree) -> Option<Handle> {
        let mut y = t.root;
        if y == NIL {
            return None;
        }
        while self.n(y).right != NIL {
            y = self.n(y).right;
        }
        Some(self.handle(y))
    }

    pub fn next(&self, h: Handle) -> Option<Handle> {
        let mut x = self.resolve(h).ok()?;
        let r = self.n(x).right;
        if r != NIL {
            let mut y = r;
            while self.n(y).left != NIL {
                y = self.n(y).left;
            }
            return Some(self.handle(y));
        }
        loop {
            let p = self.n(x).parent;
            if p == NIL {
                return None;
            }
            if self.n(p).left == x {
                return Some(self.handle(p));
            }
            x = p;
        }
    }

    pub fn prev(&self, h: Handle) -> Option<Handle> {
        let mut x = self.resolve(h).ok()?;
        let l = self.n(x).left;
        if l != NIL {
            let mut y = l;
            while self.n(y).right != NIL {
                y = self.n(y).right;
            }
            return Some(self.handle(y));
        }
        loop {
            let p = self.n(x).parent;
            if p == NIL {
                return None;
            }
            if self.n(p).right == x {
                return Some(self.handle(p));
            }
            x = p;
        }
    }

    pub fn is_live(&self, h: Handle) -> bool {
        self.resolve(h).is_ok()
    }

    pub fn handles(&self, t: &Tree) -> Vec<Handle> {
        let mut out = Vec::with_capacity(self.len(t));
        let mut cur = self.first(t);
        while let Some(h) = cur {
            out.push(h);
            cur = self.next(h);
        }
        out
    }

    /// Effective records in order; pushes every pending tag.
    pub fn in_order(&mut self, t: &Tree) -> Vec<SegmentRecord> {
        let mut out = Vec::with_capacity(self.len(t));
        self.collect(t.root, &mut out);
        out
    }

    fn collect(&mut self, x: u32, out: &mut Vec<SegmentRecord>) {
        if x == NIL {
            return;
        }
        self.push(x);
        let (l, r) = (self.n(x).left, self.n(x).right);
        self.collect(l, out);
        out.push(self.n(x).rec);
        self.collect(r, out);
    }

    /// Verifies balance, cached aggregates, parent links and key order.
    pub fn check_invariants(&mut self, t: &Tree) -> Result<(), String> {
        if t.root != NIL && self.n(t.root).parent != NIL {
            return Err("root has a parent".into());
        }
        self.check_node(t.root)?;
        let recs = self.in_order(t);
        if let Some(w) = recs.windows(2).find(|w| w[0].terminus_pos > w[1].terminus_pos) {
            return Err(format!("keys out of order: {} > {}", w[0].terminus_pos, w[1].terminus_pos));
        }
        Ok(())
    }

    /// Returns `(height, size, max_mv, any_squeezed)` recomputed from scratch.
    fn check_node(&mut self, x: u32) -> Result<(u32, u32, Threshold, bool), String> {
        if x == NIL {
            return Ok((0, 0, Threshold::Never, false));
        }
        self.push(x);
        let (l, r) = (self.n(x).left, self.n(x).right);
        for c in [l, r] {
            if c != NIL && self.n(c).parent != x {
                return Err(format!("bad parent link at node {c}"));
            }
        }
        let (hl, sl, ml, ql) = self.check_node(l)?;
        let (hr, sr, mr, qr) = self.check_node(r)?;
        if hl.abs_diff(hr) > 1 {
            return Err(format!("unbalanced node {x}: {hl} vs {hr}"));
        }
        let n = self.n(x);
        let own = n.rec.mv;
        let max = ml.max(own).max(mr);
        let sq = ql || qr || n.rec.squeezed();
        if n.height != hl.max(hr) + 1 || n.size != sl + sr + 1 {
            return Err(format!("stale height or size at node {x}"));
        }
        if n.max_mv != max || n.any_squeezed != sq {
            return Err(format!("stale aggregate at node {x}"));
        }
        if self.n(n.max_node).rec.mv != max && self.n(n.max_node).max_mv != max {
            return Err(format!("max handle mismatch at node {x}"));
        }
        Ok((n.height, n.size, max, sq))
    }

    pub fn write_csv<W: Write>(&mut self, t: &Tree, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "anchor_pos",
            "anchor_value",
            "terminus_pos",
            "mv",
            "mv_kind",
            "legacy_price",
            "legacy_reach",
            "last_bulk_station",
            "origin",
        ])?;
        for r in self.in_order(t) {
            let opt = |v: Option<i64>| v.map_or(String::new(), |p| p.to_string());
            w.write_record([
                r.anchor_pos.to_string(),
                r.anchor_value.to_string(),
                r.terminus_pos.to_string(),
                r.mv.to_string(),
                format!("{:?}", r.mv_kind),
                opt(r.legacy_price),
                r.legacy_reach.to_string(),
                opt(r.last_bulk_station.map(|s| s as i64)),
                r.origin.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
