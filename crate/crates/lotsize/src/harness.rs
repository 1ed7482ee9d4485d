//! Seeded instance generation, differential testing against the oracle and
//! scaling benchmarks.
//!
//! Randomness comes from ChaCha8 seeded with a 64-bit value, so a report
//! row can be reproduced from its seed alone.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{plan_cost, render_instance, validate_instance, Instance, Money, ValidatedInstance};
use crate::oracle::solve_naive;
use crate::solver::{solve_with, SolveOptions, StationReport};

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub n: usize,
    pub demand_max: i64,
    /// Inclusive.
    pub q_range: (i64, i64),
    /// Inclusive range for the first-period regular price.
    pub price_start_range: (i64, i64),
    pub price_decay_max: i64,
    /// Inclusive.
    pub capacity_range: (i64, i64),
    pub holding_max: i64,
    pub zero_demand_prob: f64,
}

impl GenConfig {
    /// Small instances the oracle handles instantly.
    pub fn small(seed: u64, n: usize) -> GenConfig {
        GenConfig {
            seed,
            n,
            demand_max: 15,
            q_range: (1, 12),
            price_start_range: (1, 20),
            price_decay_max: 3,
            capacity_range: (0, 40),
            holding_max: 3,
            zero_demand_prob: 0.2,
        }
    }

    /// Long horizons with demand and breakpoint sizes independent of `n`.
    pub fn bench(seed: u64, n: usize) -> GenConfig {
        GenConfig {
            seed,
            n,
            demand_max: 15,
            q_range: (8, 12),
            price_start_range: (1_000, 1_000),
            price_decay_max: 1,
            capacity_range: (0, 40),
            holding_max: 3,
            zero_demand_prob: 0.2,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let ranges = [
            ("q_range", self.q_range, 1),
            ("price_start_range", self.price_start_range, 0),
            ("capacity_range", self.capacity_range, 0),
        ];
        for (name, (lo, hi), min) in ranges {
            if lo > hi || lo < min {
                return Err(format!("{name} must satisfy {min} <= lo <= hi"));
            }
        }
        if self.n == 0 {
            return Err("n must be positive".into());
        }
        if self.demand_max < 0 || self.price_decay_max < 0 || self.holding_max < 0 {
            return Err("maxima must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.zero_demand_prob) {
            return Err("zero_demand_prob must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Draws an instance with exactly `cfg.n` periods.
///
/// # Panics
/// If `cfg` fails [`GenConfig::check`] or its magnitudes overflow the
/// validation bound.
pub fn generate_instance(cfg: &GenConfig) -> ValidatedInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    generate_with(cfg, cfg.n, &mut rng)
}

fn generate_with(cfg: &GenConfig, n: usize, rng: &mut ChaCha8Rng) -> ValidatedInstance {
    if let Err(e) = cfg.check() {
        panic!("bad generator config: {e}");
    }
    let q = rng.gen_range(cfg.q_range.0..=cfg.q_range.1);
    let mut p1 = rng.gen_range(cfg.price_start_range.0..=cfg.price_start_range.1);
    let mut p2 = rng.gen_range(0..=p1);
    let mut raw = Instance {
        n,
        demand: Vec::with_capacity(n),
        price1: Vec::with_capacity(n),
        price2: Vec::with_capacity(n),
        breakpoint: q,
        capacity: Vec::with_capacity(n),
        holding: Vec::with_capacity(n),
    };
    for t in 0..n {
        if t > 0 {
            p1 = (p1 - rng.gen_range(0..=cfg.price_decay_max)).max(0);
            p2 = (p2 - rng.gen_range(0..=cfg.price_decay_max)).max(0).min(p1);
        }
        let d = if rng.gen_bool(cfg.zero_demand_prob) {
            0
        } else {
            rng.gen_range(0..=cfg.demand_max)
        };
        raw.demand.push(d);
        raw.price1.push(p1);
        raw.price2.push(p2);
        raw.capacity.push(rng.gen_range(cfg.capacity_range.0..=cfg.capacity_range.1));
        raw.holding.push(rng.gen_range(0..=cfg.holding_max));
    }
    validate_instance(raw).expect("generated instance validates")
}

/// Instance `k` of a differential run: horizon drawn from `1..=cfg.n`,
/// stream seeded with `cfg.seed + k`.
pub fn case_instance(cfg: &GenConfig, k: u64) -> (u64, ValidatedInstance) {
    let seed = cfg.seed.wrapping_add(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=cfg.n);
    (seed, generate_with(cfg, n, &mut rng))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseResult {
    pub seed: u64,
    pub n: usize,
    pub solver_total: Option<Money>,
    pub oracle_total: Option<Money>,
    pub total_ok: bool,
    pub window_ok: bool,
    pub plan_ok: bool,
    pub segments_ok: bool,
    pub edits_ok: bool,
    pub labels_ok: bool,
    pub time_us: u128,
    pub failure: Option<String>,
}

impl CaseResult {
    pub fn matched(&self) -> bool {
        self.total_ok && self.window_ok && self.plan_ok && self.segments_ok && self.edits_ok && self.labels_ok
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub cases: Vec<CaseResult>,
}

impl Report {
    pub fn mismatches(&self) -> usize {
        self.cases.iter().filter(|c| !c.matched()).count()
    }

    pub fn passed(&self) -> bool {
        self.mismatches() == 0
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "n", "solver_total", "oracle_total", "match", "time_us"])?;
        let opt = |v: Option<Money>| v.map_or_else(|| "none".to_string(), |m| m.to_string());
        for c in &self.cases {
            w.write_record([
                c.seed.to_string(),
                c.n.to_string(),
                opt(c.solver_total),
                opt(c.oracle_total),
                c.matched().to_string(),
                c.time_us.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let n = self.cases.len();
        let _ = writeln!(s, "cases={n}");
        let _ = writeln!(s, "mismatches={}", self.mismatches());
        let count = |f: fn(&CaseResult) -> bool| self.cases.iter().filter(|c| !f(c)).count();
        let _ = writeln!(s, "total_failures={}", count(|c| c.total_ok));
        let _ = writeln!(s, "window_failures={}", count(|c| c.window_ok));
        let _ = writeln!(s, "plan_failures={}", count(|c| c.plan_ok));
        let _ = writeln!(s, "segment_bound_failures={}", count(|c| c.segments_ok));
        let _ = writeln!(s, "edit_bound_failures={}", count(|c| c.edits_ok));
        let _ = writeln!(s, "label_failures={}", count(|c| c.labels_ok));
        s
    }

    /// Diagnostics and instance dumps of every failing case.
    pub fn failure_dumps(&self) -> String {
        let mut s = String::new();
        for c in self.cases.iter().filter(|c| !c.matched()) {
            if let Some(f) = &c.failure {
                let _ = writeln!(s, "# seed {}\n{f}", c.seed);
            }
        }
        s
    }
}

/// Labels as ordered prices; a state without stored fuel ranks highest.
fn label_rank(l: Option<Money>) -> Money {
    l.unwrap_or(Money::MAX)
}

pub fn run_case(seed: u64, inst: &ValidatedInstance, opts: &SolveOptions) -> CaseResult {
    let n = inst.n();
    let table = solve_naive(inst).expect("oracle budget");
    let oracle_total = table.value[n][0];
    let mut window_ok = true;
    let mut segments_ok = true;
    let mut labels_ok = true;
    let mut notes = Vec::new();
    let mut observe = |r: &StationReport| {
        let row = &table.value[r.station];
        for (x, v) in r.window.iter().enumerate() {
            if row.get(x).copied().flatten() != *v {
                if window_ok {
                    notes.push(format!("dp({}, {x}) = {v:?}, oracle {:?}", r.station, row.get(x)));
                }
                window_ok = false;
            }
        }
        if r.segments > 2 * r.station {
            segments_ok = false;
        }
        if r.labels.windows(2).any(|w| label_rank(w[1]) > label_rank(w[0])) {
            labels_ok = false;
        }
    };
    let opts = SolveOptions {
        want_plan: true,
        ..opts.clone()
    };
    let start = Instant::now();
    let out = solve_with(inst, &opts, Some(&mut observe));
    let time_us = start.elapsed().as_micros();
    let (solver_total, plan_ok, edits_ok) = match &out {
        Ok(o) => {
            let plan_ok = o
                .plan
                .as_ref()
                .is_some_and(|p| plan_cost(inst, p) == Ok(o.total));
            (Some(o.total), plan_ok, o.stats.structural_edits() <= 8 * n)
        }
        Err(e) => {
            notes.push(format!("solver error: {e}"));
            (None, false, false)
        }
    };
    let mut c = CaseResult {
        seed,
        n,
        solver_total,
        oracle_total,
        total_ok: solver_total == oracle_total,
        window_ok,
        plan_ok,
        segments_ok,
        edits_ok,
        labels_ok,
        time_us,
        failure: None,
    };
    if !c.matched() {
        notes.push(render_instance(inst.raw()));
        c.failure = Some(notes.join("\n"));
    }
    c
}

pub fn differential_test(cfg: &GenConfig, count: usize) -> Report {
    differential_test_with(cfg, count, &SolveOptions::default())
}

/// Runs `count` cases in parallel; rows stay in seed order.
pub fn differential_test_with(cfg: &GenConfig, count: usize, opts: &SolveOptions) -> Report {
    let cases = (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let (seed, inst) = case_instance(cfg, k);
            run_case(seed, &inst, opts)
        })
        .collect();
    Report { cases }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub median_us: u128,
    pub edits: usize,
    pub edits_per_n: f64,
    pub max_segments: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `T(n_{k+1}) / T(n_k)` for consecutive sizes.
    pub ratios: Vec<f64>,
}

impl BenchReport {
    /// Largest edits-per-period constant seen.
    pub fn edit_constant(&self) -> f64 {
        self.rows.iter().map(|r| r.edits_per_n).fold(0.0, f64::max)
    }

    pub fn median_ratio(&self) -> Option<f64> {
        let mut r = self.ratios.clone();
        if r.is_empty() {
            return None;
        }
        r.sort_by(f64::total_cmp);
        let m = r.len() / 2;
        Some(if r.len() % 2 == 1 { r[m] } else { (r[m - 1] + r[m]) / 2.0 })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "median_us", "ratio", "edits", "edits_per_n", "max_segments"])?;
        for (i, r) in self.rows.iter().enumerate() {
            let ratio = match i {
                0 => String::new(),
                _ => format!("{:.3}", self.ratios[i - 1]),
            };
            w.write_record([
                r.n.to_string(),
                r.median_us.to_string(),
                ratio,
                r.edits.to_string(),
                format!("{:.3}", r.edits_per_n),
                r.max_segments.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Median solve time over `reps` runs (at least 5) for each size.
pub fn benchmark_scaling(sizes: &[usize], reps: usize, seed: u64) -> BenchReport {
    let reps = reps.max(5);
    let mut report = BenchReport::default();
    for &n in sizes {
        let inst = generate_instance(&GenConfig::bench(seed, n));
        let mut times = Vec::with_capacity(reps);
        let mut stats = None;
        for _ in 0..reps {
            let start = Instant::now();
            let out = solve_with(&inst, &SolveOptions::default(), None).expect("generated instances are feasible");
            times.push(start.elapsed().as_micros());
            stats = Some(out.stats);
        }
        times.sort_unstable();
        let stats = stats.unwrap();
        let edits = stats.structural_edits();
        report.rows.push(BenchRow {
            n,
            median_us: times[reps / 2],
            edits,
            edits_per_n: edits as f64 / n as f64,
            max_segments: stats.max_segments(),
        });
    }
    report.ratios = report
        .rows
        .windows(2)
        .map(|w| w[1].median_us as f64 / w[0].median_us.max(1) as f64)
        .collect();
    report
}
