//! Pseudo-polynomial reference DP over every inventory level.
//!
//! `value[t][i]` is the cheapest way to end period `t` holding `i` units.
//! [`solve_naive`] uses running minima per price tier; [`solve_quadratic`]
//! enumerates every order quantity and exists to cross-check it.

use std::collections::VecDeque;
use std::io::Write;

use thiserror::Error;

use crate::model::{price_function, Fuel, Money, Plan, ValidatedInstance};

/// Largest number of cells a table may hold.
pub const ORACLE_CELL_BUDGET: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("table would need {cells} cells, budget is {budget}")]
    BudgetExceeded { cells: usize, budget: usize },
    #[error("dp({t}, {i}) is outside the table")]
    IndexOutOfRange { t: usize, i: Fuel },
    #[error("no feasible plan exists")]
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpTable {
    /// `None` is infinity.
    pub value: Vec<Vec<Option<Money>>>,
    pub max_b: Fuel,
}

impl DpTable {
    fn empty(inst: &ValidatedInstance) -> Result<DpTable, OracleError> {
        let n = inst.n();
        let max_b = (1..=n).map(|t| inst.capacity(t)).max().unwrap_or(0);
        let cells = (n + 1).saturating_mul(max_b as usize + 1);
        if cells > ORACLE_CELL_BUDGET {
            return Err(OracleError::BudgetExceeded {
                cells,
                budget: ORACLE_CELL_BUDGET,
            });
        }
        let mut value = vec![vec![None; max_b as usize + 1]; n + 1];
        value[0][0] = Some(0);
        Ok(DpTable { value, max_b })
    }

    /// Highest stored inventory level for period `t`.
    fn width(inst: &ValidatedInstance, t: usize) -> Fuel {
        if t == 0 {
            0
        } else {
            inst.capacity(t)
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "i", "value"])?;
        for (t, row) in self.value.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                let cell = v.map_or_else(|| "inf".to_string(), |m| m.to_string());
                w.write_record([t.to_string(), i.to_string(), cell])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn solve_naive(inst: &ValidatedInstance) -> Result<DpTable, OracleError> {
    let mut table = DpTable::empty(inst)?;
    let q = inst.q();
    for t in 1..=inst.n() {
        let (prev_rows, rows) = table.value.split_at_mut(t);
        let prev = &prev_rows[t - 1];
        let row = &mut rows[0];
        let bprev = DpTable::width(inst, t - 1);
        let (d, p1, p2, h) = (inst.demand(t), inst.p1(t), inst.p2(t), inst.holding(t));

        // Monotone deque over i' of prev[i'] - p1*i' for the tier below Q.
        let mut window: VecDeque<(Fuel, Money)> = VecDeque::new();
        let mut next_in: Fuel = 0;
        // Prefix minimum of prev[i'] - p2*i' for the discounted tier.
        let mut best2: Option<Money> = None;
        let mut next_in2: Fuel = 0;

        for i in 0..=inst.capacity(t) {
            let top = i + d;
            let hi = top.min(bprev);
            while next_in <= hi {
                if let Some(v) = prev[next_in as usize] {
                    let key = v - p1 * next_in;
                    while window.back().is_some_and(|&(_, k)| k >= key) {
                        window.pop_back();
                    }
                    window.push_back((next_in, key));
                }
                next_in += 1;
            }
            let lo1 = top - q + 1;
            while window.front().is_some_and(|&(j, _)| j < lo1) {
                window.pop_front();
            }
            let c1 = window.front().map(|&(_, k)| k + p1 * top);

            let hi2 = (top - q).min(bprev);
            while next_in2 <= hi2 {
                if let Some(v) = prev[next_in2 as usize] {
                    let key = v - p2 * next_in2;
                    best2 = Some(best2.map_or(key, |b| b.min(key)));
                }
                next_in2 += 1;
            }
            let c2 = if hi2 >= 0 {
                best2.map(|k| k + p2 * top)
            } else {
                None
            };

            row[i as usize] = min_opt(c1, c2).map(|c| c + h * i);
        }
    }
    Ok(table)
}

/// Direct enumeration of every order quantity.
pub fn solve_quadratic(inst: &ValidatedInstance) -> Result<DpTable, OracleError> {
    let mut table = DpTable::empty(inst)?;
    for t in 1..=inst.n() {
        let bprev = DpTable::width(inst, t - 1);
        for i in 0..=inst.capacity(t) {
            let mut best = None;
            for ip in 0..=bprev.min(i + inst.demand(t)) {
                if let Some(v) = table.value[t - 1][ip as usize] {
                    let x = i + inst.demand(t) - ip;
                    best = min_opt(best, Some(v + price_function(inst, t, x)));
                }
            }
            table.value[t][i as usize] = best.map(|c| c + inst.holding(t) * i);
        }
    }
    Ok(table)
}

fn min_opt(a: Option<Money>, b: Option<Money>) -> Option<Money> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

pub fn dp_value(table: &DpTable, t: usize, i: Fuel) -> Result<Option<Money>, OracleError> {
    if t >= table.value.len() || i < 0 || i > table.max_b {
        return Err(OracleError::IndexOutOfRange { t, i });
    }
    Ok(table.value[t][i as usize])
}

pub fn recover_plan_naive(inst: &ValidatedInstance, table: &DpTable) -> Result<Plan, OracleError> {
    let n = inst.n();
    let total = table.value[n][0].ok_or(OracleError::Infeasible)?;
    let mut orders = vec![0; n];
    let mut i: Fuel = 0;
    for t in (1..=n).rev() {
        let target = table.value[t][i as usize].ok_or(OracleError::Infeasible)?;
        let top = i + inst.demand(t);
        let bprev = DpTable::width(inst, t - 1);
        let x = (0..=top)
            .find(|&x| {
                let ip = top - x;
                ip <= bprev
                    && table.value[t - 1][ip as usize].is_some_and(|v| {
                        v + price_function(inst, t, x) + inst.holding(t) * i == target
                    })
            })
            .ok_or(OracleError::Infeasible)?;
        orders[t - 1] = x;
        i = top - x;
    }
    let mut plan = Plan::from_orders(inst, orders);
    plan.total = total;
    Ok(plan)
}
