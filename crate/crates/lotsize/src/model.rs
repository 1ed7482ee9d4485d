//! Problem data, validation and exact cost evaluation.
//!
//! Periods are numbered `1..=n` in every public function. Quantities and
//! money are plain `i64`; validation bounds the instance so that no value the
//! solver forms can overflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Money in minor currency units.
pub type Money = i64;
/// Fuel units. Also used for absolute positions.
pub type Fuel = i64;

const VALUE_BOUND: i128 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub n: usize,
    pub demand: Vec<i64>,
    pub price1: Vec<i64>,
    pub price2: Vec<i64>,
    pub breakpoint: i64,
    pub capacity: Vec<i64>,
    pub holding: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("n must be at least 1")]
    EmptyHorizon,
    #[error("{field} has length {got}, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{field}[{t}] is negative")]
    NegativeValue { field: &'static str, t: usize },
    #[error("breakpoint must be at least 1")]
    ZeroBreakpoint,
    #[error("{field} increases at t={t}")]
    NonMonotonePrices { field: &'static str, t: usize },
    #[error("price2 exceeds price1 at t={t}")]
    DiscountAboveRegular { t: usize },
    #[error("instance magnitudes exceed the 62-bit value bound")]
    Overflow,
    #[error("plan infeasible at t={t}: {reason}")]
    InfeasiblePlan { t: usize, reason: &'static str },
    #[error("cannot parse instance: {0}")]
    Parse(String),
}

/// An instance that passed [`validate_instance`], with prefix demands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedInstance {
    inst: Instance,
    prefix: Vec<Fuel>,
}

impl ValidatedInstance {
    pub fn raw(&self) -> &Instance {
        &self.inst
    }
    pub fn n(&self) -> usize {
        self.inst.n
    }
    pub fn q(&self) -> Fuel {
        self.inst.breakpoint
    }
    pub fn demand(&self, t: usize) -> Fuel {
        self.inst.demand[t - 1]
    }
    pub fn p1(&self, t: usize) -> Money {
        self.inst.price1[t - 1]
    }
    pub fn p2(&self, t: usize) -> Money {
        self.inst.price2[t - 1]
    }
    pub fn capacity(&self, t: usize) -> Fuel {
        self.inst.capacity[t - 1]
    }
    pub fn holding(&self, t: usize) -> Money {
        self.inst.holding[t - 1]
    }
    /// `D[i]`, the demand of periods `1..i`.
    pub fn prefix(&self, i: usize) -> Fuel {
        self.prefix[i - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub orders: Vec<Fuel>,
    pub inventory: Vec<Fuel>,
    pub total: Money,
}

impl Plan {
    /// Builds the inventory trace of `orders`; `total` is left at zero.
    pub fn from_orders(inst: &ValidatedInstance, orders: Vec<Fuel>) -> Plan {
        let mut inventory = Vec::with_capacity(orders.len());
        let mut level = 0;
        for (t, x) in orders.iter().enumerate() {
            level += x - inst.demand(t + 1);
            inventory.push(level);
        }
        Plan {
            orders,
            inventory,
            total: 0,
        }
    }
}

pub fn validate_instance(raw: Instance) -> Result<ValidatedInstance, ModelError> {
    let n = raw.n;
    if n == 0 {
        return Err(ModelError::EmptyHorizon);
    }
    let fields: [(&'static str, &Vec<i64>); 5] = [
        ("demand", &raw.demand),
        ("price1", &raw.price1),
        ("price2", &raw.price2),
        ("capacity", &raw.capacity),
        ("holding", &raw.holding),
    ];
    for (field, v) in fields {
        if v.len() != n {
            return Err(ModelError::LengthMismatch {
                field,
                got: v.len(),
                expected: n,
            });
        }
    }
    for (field, v) in fields {
        if let Some(t) = v.iter().position(|&x| x < 0) {
            return Err(ModelError::NegativeValue { field, t: t + 1 });
        }
    }
    if raw.breakpoint < 0 {
        return Err(ModelError::NegativeValue {
            field: "breakpoint",
            t: 1,
        });
    }
    if raw.breakpoint == 0 {
        return Err(ModelError::ZeroBreakpoint);
    }
    for (field, v) in [("price1", &raw.price1), ("price2", &raw.price2)] {
        if let Some(t) = (1..n).find(|&t| v[t] > v[t - 1]) {
            return Err(ModelError::NonMonotonePrices { field, t });
        }
    }
    if let Some(t) = (0..n).find(|&t| raw.price2[t] > raw.price1[t]) {
        return Err(ModelError::DiscountAboveRegular { t: t + 1 });
    }

    let max = |v: &Vec<i64>| *v.iter().max().unwrap() as i128;
    let (md, mp, mh, mb) = (
        max(&raw.demand),
        max(&raw.price1),
        max(&raw.holding),
        max(&raw.capacity),
    );
    let total_d: i128 = raw.demand.iter().map(|&d| d as i128).sum();
    let q = raw.breakpoint as i128;
    let nn = n as i128;
    let product = nn
        .checked_mul(md)
        .and_then(|x| x.checked_mul(mp))
        .and_then(|x| x.checked_mul(1 + mh));
    let span = total_d + (2 * q).max(mb);
    let window = nn
        .checked_mul(span)
        .and_then(|x| x.checked_mul(mp + mh));
    match (product, window) {
        (Some(a), Some(b)) if a <= VALUE_BOUND && b <= VALUE_BOUND => {}
        _ => return Err(ModelError::Overflow),
    }

    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = 0;
    prefix.push(0);
    for &d in &raw.demand {
        acc += d;
        prefix.push(acc);
    }
    Ok(ValidatedInstance { inst: raw, prefix })
}

/// Cost of buying `x` units in period `t`.
pub fn price_function(inst: &ValidatedInstance, t: usize, x: Fuel) -> Money {
    if x < inst.q() {
        inst.p1(t) * x
    } else {
        inst.p2(t) * x
    }
}

pub fn plan_cost(inst: &ValidatedInstance, plan: &Plan) -> Result<Money, ModelError> {
    let n = inst.n();
    if plan.orders.len() != n || plan.inventory.len() != n {
        return Err(ModelError::InfeasiblePlan {
            t: plan.orders.len().min(plan.inventory.len()) + 1,
            reason: "plan length differs from n",
        });
    }
    let mut prev = 0;
    let mut total = 0;
    for t in 1..=n {
        let x = plan.orders[t - 1];
        let level = plan.inventory[t - 1];
        if x < 0 {
            return Err(ModelError::InfeasiblePlan {
                t,
                reason: "negative order",
            });
        }
        if level != prev + x - inst.demand(t) {
            return Err(ModelError::InfeasiblePlan {
                t,
                reason: "flow equation violated",
            });
        }
        if level < 0 || level > inst.capacity(t) {
            return Err(ModelError::InfeasiblePlan {
                t,
                reason: "inventory outside [0, B(t)]",
            });
        }
        total += price_function(inst, t, x) + inst.holding(t) * level;
        prev = level;
    }
    Ok(total)
}

/// `D[i] = d_1 + ... + d_{i-1}` for `1 <= i <= n+1`.
pub fn prefix_demand(inst: &ValidatedInstance, i: usize) -> Fuel {
    inst.prefix(i)
}

pub fn parse_instance(text: &str) -> Result<Instance, ModelError> {
    toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
}

pub fn render_instance(inst: &Instance) -> String {
    toml::to_string(inst).expect("instance fields are always representable")
}
