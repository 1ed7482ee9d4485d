#![allow(dead_code)]

use lotsize::bst::{Forest, Handle, LazyTag, MvKind, SegmentRecord, Side, Tree};
use lotsize::harness::{benchmark_scaling, case_instance, differential_test, GenConfig, Report};
use lotsize::model::{Fuel, Money};
use lotsize::oracle::solve_naive;
use lotsize::segments::{
    dominates_at_terminus, dominates_equal_slope, kill_threshold, line_merge_band, value_at, PriceContext,
    Threshold,
};
use lotsize::solver::{query_dp, SolveOptions, SolverState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Verdict {
        Verdict { pass, detail }
    }
}

/// 1000 instances, horizons up to 10, demands up to 15, Q up to 12,
/// capacities up to 40, holding up to 3.
pub fn random_run(seed: u64, count: usize) -> Report {
    differential_test(&GenConfig::small(seed, 10), count)
}

pub fn oracle_totals(r: &Report) -> Verdict {
    let ok = r.cases.iter().filter(|c| c.total_ok).count();
    Verdict::new(ok == r.cases.len(), format!("{ok}/{} totals equal the reference", r.cases.len()))
}

pub fn window_values(r: &Report, at_least: usize) -> Verdict {
    let ok = r.cases.iter().filter(|c| c.window_ok).count();
    let n = r.cases.len();
    Verdict::new(
        ok == n && n >= at_least,
        format!("{ok}/{n} instances match dp(i, x) at every station for x <= min(B(i), 2Q)"),
    )
}

pub fn structural_bounds(r: &Report) -> Verdict {
    let seg = r.cases.iter().filter(|c| !c.segments_ok).count();
    let edits = r.cases.iter().filter(|c| !c.edits_ok).count();
    Verdict::new(
        seg == 0 && edits == 0,
        format!("segment-count violations {seg}, edit-count violations {edits}"),
    )
}

pub fn labels(r: &Report) -> Verdict {
    let bad = r.cases.iter().filter(|c| !c.labels_ok).count();
    Verdict::new(bad == 0, format!("{bad} instances with increasing labels"))
}

pub fn plans(r: &Report) -> Verdict {
    let ok = r.cases.iter().filter(|c| c.plan_ok).count();
    Verdict::new(ok == r.cases.len(), format!("{ok}/{} plans feasible and re-cost exactly", r.cases.len()))
}

fn seg(a: Fuel, v: Money, price: Option<Money>, reach: Fuel) -> SegmentRecord {
    SegmentRecord {
        legacy_price: price,
        legacy_reach: reach.max(a),
        terminus_pos: reach.max(a),
        ..SegmentRecord::point(a, v)
    }
}

/// Kill verdict against a left neighbour with steeper or equal cost.
fn kill_case(rng: &mut ChaCha8Rng) -> Option<bool> {
    let pi = rng.gen_range(1..=10);
    let lj = rng.gen_bool(0.7).then(|| rng.gen_range(0..=pi));
    let lk = match lj {
        Some(l) if rng.gen_bool(0.6) => Some(rng.gen_range(l..=pi)),
        _ => None,
    };
    let aj = rng.gen_range(0..20);
    let mut j = seg(aj, rng.gen_range(0..150), lj, aj + rng.gen_range(0..15));
    j.terminus_pos = rng.gen_range(j.anchor_pos..=j.legacy_reach);
    let ak = rng.gen_range(0..=j.terminus_pos);
    let k = seg(ak, rng.gen_range(0..150), lk, ak + rng.gen_range(0..15));
    if !kill_threshold(&k, &j).0.admits(pi) {
        return Some(false);
    }
    let ok = (ak.max(aj)..=j.terminus_pos).all(|p| value_at(&k, p, pi) <= value_at(&j, p, pi));
    ok.then_some(true)
}

fn terminus_case(rng: &mut ChaCha8Rng) -> Option<bool> {
    let p1 = rng.gen_range(1..=10);
    let p2 = rng.gen_range(0..=p1);
    let ctx = PriceContext {
        station: 1,
        p1,
        p2,
        q: rng.gen_range(1..=8),
    };
    let ar = rng.gen_range(0..20);
    let lr = rng.gen_bool(0.5).then(|| rng.gen_range(0..=p1));
    let mut right = seg(ar, rng.gen_range(0..150), lr, ar + rng.gen_range(0..12));
    right.terminus_pos = rng.gen_range(ar..=right.legacy_reach);
    let al = rng.gen_range(0..=right.terminus_pos);
    let ll = rng.gen_bool(0.6).then(|| rng.gen_range(0..=p1));
    let left = seg(al, rng.gen_range(0..150), ll, al + rng.gen_range(0..12));
    let c = if rng.gen_bool(0.5) { p1 } else { p2 };
    if !dominates_at_terminus(&left, &right, c, &ctx) {
        return Some(false);
    }
    let t = right.terminus_pos - ar;
    let rp = right.legacy_price.unwrap_or(p2) as i128;
    let target = right.anchor_value as i128 + t as i128 * rp;
    let l = right.terminus_pos - al;
    let stored = match left.legacy_price {
        Some(_) if left.legacy_reach > al => (left.legacy_reach - al).min(l),
        _ => 0,
    };
    let lp = left.legacy_price.unwrap_or(0) as i128;
    let buy = |m: Fuel| -> i128 {
        let unit = if c == p1 || m < ctx.q { c.max(p1) } else { p2 };
        unit as i128 * m as i128
    };
    let ok = (0..=stored).any(|s| left.anchor_value as i128 + lp * s as i128 + buy(l - s) <= target);
    ok.then_some(true)
}

fn equal_slope_case(rng: &mut ChaCha8Rng) -> Option<bool> {
    let price = rng.gen_range(0..=10);
    let ar = rng.gen_range(0..20);
    let lr = rng.gen_bool(0.5).then_some(price);
    let right = seg(ar, rng.gen_range(0..150), lr, ar + rng.gen_range(0..12));
    let al = rng.gen_range(0..=ar);
    let ll = rng.gen_bool(0.5).then(|| if rng.gen_bool(0.7) { price } else { rng.gen_range(0..=10) });
    let left = seg(al, rng.gen_range(0..150), ll, al + rng.gen_range(0..30));
    match dominates_equal_slope(&left, &right, price) {
        Ok(true) => {
            let hi = right.legacy_reach.max(ar) + 5;
            let ok = (ar..=hi).all(|p| value_at(&left, p, price) <= value_at(&right, p, price));
            ok.then_some(true)
        }
        _ => Some(false),
    }
}

/// A block staircase merged behind a list of plain states must keep the
/// pointwise minimum over the band.
fn merge_case(rng: &mut ChaCha8Rng) -> bool {
    let pi = rng.gen_range(2..=10);
    let p2 = rng.gen_range(0..pi);
    let ctx = PriceContext {
        station: 1,
        p1: pi,
        p2,
        q: rng.gen_range(1..=6),
    };
    let lo = rng.gen_range(0..10);
    let u = lo + rng.gen_range(0..25);
    let mut r = Vec::new();
    let (mut a, mut key) = (rng.gen_range(0..=lo), rng.gen_range(100..200));
    for _ in 0..rng.gen_range(1..5) {
        r.push(SegmentRecord::point(a, key + pi * a));
        a += rng.gen_range(1..6);
        key -= rng.gen_range(1..15);
        if a > u {
            break;
        }
    }
    let mut x = Vec::new();
    let (mut a, mut key) = (rng.gen_range(lo..=u), rng.gen_range(100..250));
    while a <= u && x.len() < 4 {
        x.push(seg(a, key + p2 * a, Some(p2), u));
        a += rng.gen_range(1..6);
        key -= rng.gen_range(1..15);
    }
    let all: Vec<SegmentRecord> = r.iter().chain(&x).copied().collect();
    let (r2, x2) = line_merge_band(r, x, lo, &ctx);
    let kept: Vec<SegmentRecord> = r2.iter().chain(&x2).copied().collect();
    let env = |s: &[SegmentRecord], p: Fuel| s.iter().filter_map(|b| value_at(b, p, pi)).min();
    (lo..=u).all(|p| env(&kept, p) == env(&all, p))
}

pub fn dominance(seed: u64, cases: usize) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut trues, mut wrong) = (0, 0);
    for i in 0..cases {
        let v = match i % 3 {
            0 => kill_case(&mut rng),
            1 => terminus_case(&mut rng),
            _ => equal_slope_case(&mut rng),
        };
        match v {
            Some(true) => trues += 1,
            Some(false) => {}
            None => wrong += 1,
        }
    }
    let merges = cases / 10;
    let bad_merges = (0..merges).filter(|_| !merge_case(&mut rng)).count();
    Verdict::new(
        wrong == 0 && bad_merges == 0 && trues > 0,
        format!(
            "{cases} predicate cases, {trues} true verdicts, {wrong} refuted; {bad_merges}/{merges} merges off the envelope"
        ),
    )
}

/// Copies a solver's segment list into a fresh tree with kill thresholds
/// computed from scratch.
fn rebuild(recs: &[SegmentRecord]) -> (Forest, Tree, Vec<Handle>) {
    let mut f = Forest::new();
    let mut t = Tree::EMPTY;
    let hs: Vec<Handle> = recs.iter().map(|r| f.push_back(&mut t, *r)).collect();
    for i in 0..hs.len() {
        let (mv, kind) = match i {
            0 => (Threshold::Never, MvKind::Regular),
            _ => kill_threshold(&recs[i - 1], &recs[i]),
        };
        f.change_mv(hs[i], mv, kind).unwrap();
    }
    (f, t, hs)
}

pub fn holding_shift(seed: u64, trees: usize) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GenConfig::small(seed, 40);
    let (mut checked, mut bad, mut nodes) = (0, 0, 0);
    let mut k = 0;
    while checked < trees {
        let (_, inst) = case_instance(&cfg, k);
        k += 1;
        let mut st = SolverState::new(&inst, &SolveOptions::default());
        let stop = rng.gen_range(1..=inst.n());
        while st.station() <= stop {
            st.build_station().unwrap();
        }
        let recs = st.records();
        if recs.len() < 2 {
            continue;
        }
        checked += 1;
        let (mut f, t, hs) = rebuild(&recs);
        let before: Vec<Threshold> = hs.iter().map(|&h| f.record(h).mv).collect();
        let top = f.find_max(&t);
        let h = rng.gen_range(1..=5);
        let lo = inst.prefix(stop + 1);
        f.apply_all(&t, &LazyTag::holding(h, lo));
        let after: Vec<SegmentRecord> = hs.iter().map(|&x| f.record(x)).collect();
        nodes += hs.len();
        let fresh_ok = (1..after.len()).all(|i| {
            let (mv, _) = kill_threshold(&after[i - 1], &after[i]);
            mv == after[i].mv && mv == before[i].shift(h)
        });
        if !fresh_ok || f.find_max(&t) != top {
            bad += 1;
        }
    }
    Verdict::new(bad == 0, format!("{checked} trees, {nodes} nodes, {bad} with shifted thresholds off"))
}

/// Applies a tag to a model list entry the way the tree does.
fn model_apply(r: &mut SegmentRecord, tag: &LazyTag) {
    tag.apply(r);
}

fn random_threshold(rng: &mut ChaCha8Rng) -> Threshold {
    match rng.gen_range(0..10) {
        0 => Threshold::Never,
        1 => Threshold::Always,
        _ => Threshold::ratio(rng.gen_range(-50..50), rng.gen_range(1..4)),
    }
}

fn leftmost_max(model: &[(Handle, SegmentRecord)]) -> Option<Handle> {
    let mut best: Option<(Threshold, Handle)> = None;
    for (h, r) in model {
        if best.is_none_or(|(m, _)| r.mv > m) {
            best = Some((r.mv, *h));
        }
    }
    best.map(|(_, h)| h)
}

/// Runs a random script against the tree and a sorted list, comparing after
/// every step.
pub fn bst_script(seed: u64, ops: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Forest::new();
    let mut t = Tree::EMPTY;
    let mut model: Vec<(Handle, SegmentRecord)> = Vec::new();
    let mut max_height = 0;
    for step in 0..ops {
        let fail = |what: String| format!("step {step}: {what}");
        let op = if model.len() < 5 { 0 } else { rng.gen_range(0..13) % 11 };
        match op {
            0 | 1 => {
                let key = rng.gen_range(-500..500);
                let mut r = SegmentRecord::point(key + rng.gen_range(-3..=3), rng.gen_range(-1000..1000));
                r.terminus_pos = key;
                r.mv = random_threshold(&mut rng);
                match f.insert(&mut t, r) {
                    Ok(h) => {
                        let at = model.partition_point(|(_, m)| m.terminus_pos < key);
                        if model.get(at).is_some_and(|(_, m)| m.terminus_pos == key) {
                            return Err(fail("duplicate key accepted".into()));
                        }
                        model.insert(at, (h, r));
                    }
                    Err(_) => {
                        if !model.iter().any(|(_, m)| m.terminus_pos == key) {
                            return Err(fail("fresh key rejected".into()));
                        }
                    }
                }
            }
            2 => {
                let i = rng.gen_range(0..model.len());
                let (h, r) = model.remove(i);
                if f.remove(&mut t, h) != Ok(r) {
                    return Err(fail("remove returned a different record".into()));
                }
                if f.try_record(h).is_ok() {
                    return Err(fail("removed handle still live".into()));
                }
            }
            3 => {
                let x = rng.gen_range(-520..520);
                let tag = if rng.gen_bool(0.5) {
                    LazyTag::value_shift(rng.gen_range(-20..20))
                } else {
                    LazyTag::mv_shift(rng.gen_range(-5..5))
                };
                f.range_apply(&mut t, x, &tag);
                for (_, r) in model.iter_mut().filter(|(_, r)| r.terminus_pos < x) {
                    model_apply(r, &tag);
                }
            }
            4 => {
                let i = rng.gen_range(0..model.len());
                let w = random_threshold(&mut rng);
                f.change_mv(model[i].0, w, MvKind::Terminus).unwrap();
                model[i].1.mv = w;
                model[i].1.mv_kind = MvKind::Terminus;
            }
            5 => {
                if f.find_max(&t) != leftmost_max(&model) {
                    return Err(fail("find_max disagrees".into()));
                }
                if rng.gen_bool(0.3) {
                    let h = leftmost_max(&model).unwrap();
                    let i = model.iter().position(|(x, _)| *x == h).unwrap();
                    let (_, r) = model.remove(i);
                    if f.remove_max(&mut t) != Ok(r) {
                        return Err(fail("remove_max disagrees".into()));
                    }
                }
            }
            6 => {
                let x = rng.gen_range(-520..520);
                let (l, r) = f.split(t, x);
                let cut = model.partition_point(|(_, m)| m.terminus_pos <= x);
                if f.len(&l) != cut || f.len(&r) != model.len() - cut {
                    return Err(fail(format!("split at {x} has wrong sizes")));
                }
                f.check_invariants(&l).map_err(&fail)?;
                f.check_invariants(&r).map_err(&fail)?;
                t = f.join(l, r).map_err(|e| fail(e.to_string()))?;
            }
            7 => {
                let k = rng.gen_range(0..=model.len());
                let (l, r) = f.split_at(t, k);
                if f.len(&l) != k {
                    return Err(fail("split_at has wrong size".into()));
                }
                if k > 0 && k < model.len() && f.join(r, l).is_ok() {
                    return Err(fail("join accepted overlapping keys".into()));
                }
                t = f.concat(l, r);
            }
            8 => {
                let x = rng.gen_range(-520..520);
                let (lo, hi) = f.search(&t, x);
                let cut = model.partition_point(|(_, m)| m.terminus_pos <= x);
                let want_lo = cut.checked_sub(1).map(|i| model[i].0);
                let want_hi = model.get(cut).map(|e| e.0);
                if (lo, hi) != (want_lo, want_hi) {
                    return Err(fail(format!("search {x} disagrees")));
                }
            }
            9 => {
                let want = model.iter().find(|(_, r)| r.squeezed()).map(|e| e.0);
                if f.first_squeezed(&t) != want {
                    return Err(fail("first_squeezed disagrees".into()));
                }
                let i = rng.gen_range(0..model.len());
                let h = model[i].0;
                if f.next(h) != model.get(i + 1).map(|e| e.0) || f.prev(h) != i.checked_sub(1).map(|j| model[j].0) {
                    return Err(fail("neighbour links disagree".into()));
                }
            }
            _ => {
                let side = if rng.gen_bool(0.5) { Side::Min } else { Side::Max };
                let (r, rest) = f.extract_extreme(t, side).unwrap();
                let want = match side {
                    Side::Min => model.remove(0).1,
                    Side::Max => model.pop().unwrap().1,
                };
                if r != want {
                    return Err(fail("extract_extreme disagrees".into()));
                }
                t = rest;
            }
        }
        f.check_invariants(&t).map_err(&fail)?;
        let got = f.in_order(&t);
        let want: Vec<SegmentRecord> = model.iter().map(|e| e.1).collect();
        if got != want {
            return Err(fail("in-order records differ from the model".into()));
        }
        let n = model.len() as f64;
        let bound = (1.45 * (n + 2.0).log2()).floor() as u32;
        let h = f.tree_height(&t);
        if h > bound.max(1) {
            return Err(fail(format!("height {h} exceeds AVL bound {bound}")));
        }
        max_height = max_height.max(h as usize);
    }
    Ok(max_height)
}

pub fn bst_model(seed: u64, scripts: usize, ops: usize) -> Verdict {
    let mut errors = Vec::new();
    let mut height = 0;
    for s in 0..scripts as u64 {
        match bst_script(seed + s, ops) {
            Ok(h) => height = height.max(h),
            Err(e) => errors.push(format!("script {s}: {e}")),
        }
    }
    let detail = match errors.first() {
        None => format!("{scripts} scripts of {ops} operations agree with the list model, max height {height}"),
        Some(e) => format!("{} scripts diverge; first: {e}", errors.len()),
    };
    Verdict::new(errors.is_empty(), detail)
}

/// Queries every `x <= B(i)` at stations whose capacity exceeds `2Q`.
pub fn queries(seed: u64, instances: usize) -> Verdict {
    let cfg = GenConfig {
        q_range: (1, 4),
        capacity_range: (10, 40),
        ..GenConfig::small(seed, 8)
    };
    let (mut seen, mut points, mut bad, mut touched) = (0, 0, 0, 0);
    let mut k = 0;
    while seen < instances {
        let (_, inst) = case_instance(&cfg, k);
        k += 1;
        let stations: Vec<usize> = (1..=inst.n()).filter(|&i| inst.capacity(i) > 2 * inst.q()).collect();
        if stations.is_empty() {
            continue;
        }
        seen += 1;
        let table = solve_naive(&inst).unwrap();
        let mut st = SolverState::new(&inst, &SolveOptions::default());
        for i in 1..=inst.n() {
            if stations.contains(&i) {
                let before = st.clone();
                for x in 0..=inst.capacity(i) {
                    points += 1;
                    let want = table.value[i][x as usize];
                    if query_dp(&st, i, x).ok() != want {
                        bad += 1;
                    }
                }
                if st != before {
                    touched += 1;
                }
            }
            st.build_station().unwrap();
        }
    }
    Verdict::new(
        bad == 0 && touched == 0,
        format!("{instances} instances, {points} queries, {bad} wrong, {touched} states changed"),
    )
}

pub const SCALING_SIZES: [usize; 3] = [1 << 16, 1 << 17, 1 << 18];

pub fn scaling(seed: u64) -> Verdict {
    let r = benchmark_scaling(&SCALING_SIZES, 5, seed);
    let ratio = r.median_ratio().unwrap();
    let slowest = r.rows.iter().map(|x| x.median_us).max().unwrap();
    let times: Vec<String> = r.rows.iter().map(|x| format!("{}:{}ms", x.n, x.median_us / 1000)).collect();
    Verdict::new(
        ratio <= 2.5 && slowest < 10_000_000,
        format!(
            "median ratio {ratio:.3} (limit 2.5), times {}, edits per period {:.3}",
            times.join(" "),
            r.edit_constant()
        ),
    )
}
