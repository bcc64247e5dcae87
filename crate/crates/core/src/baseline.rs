//! Myopic comparator: thermostat consumers and single-period cost-minimizing dispatch.
//!
//! Each consumer buys whatever drives its temperature to the comfort
//! midpoint (within its consumption limits). The coordinator then assigns
//! production levels that meet the summed demand at least cost for the
//! current period only, and the multiplier of the balance row is the price.

use serde::{Deserialize, Serialize};

use crate::agent::{ConsumerParams, Disturbance, Population, SupplierParams};
use crate::error::{Error, Result};

pub fn thermostat_demand(consumer: &ConsumerParams, x: f64, w: f64) -> f64 {
    consumer
        .setpoint_consumption(x, w)
        .clamp(0.0, consumer.max_consumption())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    /// New production level per supplier.
    pub production: Vec<f64>,
    /// Ramp per supplier, `production - a * previous - v`.
    pub ramps: Vec<f64>,
    pub price: f64,
    /// False when the demand was out of reach and the fallback clipped it.
    pub feasible: bool,
    /// Demand actually served.
    pub served: f64,
}

/// Production interval reachable by one supplier this period.
pub fn production_bounds(s: &SupplierParams, previous: f64, v: f64) -> (f64, f64) {
    let base = s.a * previous + v;
    ((base - s.ramp_down()).max(0.0), base + s.r_max)
}

fn supply_at(price: f64, suppliers: &[SupplierParams], bounds: &[(f64, f64)]) -> f64 {
    suppliers
        .iter()
        .zip(bounds)
        .map(|(s, &(lo, hi))| ((price - s.c2 - s.c4) / (2.0 * s.c1)).clamp(lo, hi))
        .sum()
}

/// Least-cost dispatch of `demand` for one period.
///
/// Every supplier produces `clamp((lambda - c2 - c4) / (2 c1), lo, hi)`,
/// which is piecewise linear and nondecreasing in `lambda`; the clearing
/// price is located exactly among the breakpoints. Where a range of prices
/// clears, the smallest is reported, except when every supplier sits at its
/// lower bound, where the largest is.
pub fn greedy_dispatch(
    suppliers: &[SupplierParams],
    previous: &[f64],
    v: f64,
    demand: f64,
    fallback_clip: bool,
) -> Result<DispatchResult> {
    if suppliers.len() != previous.len() {
        return Err(Error::InvalidInput(format!(
            "{} previous levels for {} suppliers",
            previous.len(),
            suppliers.len()
        )));
    }
    if suppliers.is_empty() || !demand.is_finite() {
        return Err(Error::InvalidInput("dispatch needs suppliers and a finite demand".into()));
    }
    let bounds: Vec<(f64, f64)> = suppliers
        .iter()
        .zip(previous)
        .map(|(s, &p)| production_bounds(s, p, v))
        .collect();
    if let Some(i) = bounds.iter().position(|(lo, hi)| lo > hi) {
        return Err(Error::Infeasible(format!(
            "supplier {i} cannot keep production nonnegative"
        )));
    }
    let mc = |i: usize, x: f64| suppliers[i].marginal_cost(x);
    let total_lo: f64 = bounds.iter().map(|b| b.0).sum();
    let total_hi: f64 = bounds.iter().map(|b| b.1).sum();
    let tol = 1e-10 * (1.0 + demand.abs());

    let finish = |production: Vec<f64>, price: f64, feasible: bool| {
        let ramps = production
            .iter()
            .zip(suppliers.iter().zip(previous))
            .map(|(&x, (s, &p))| x - s.a * p - v)
            .collect();
        let served = production.iter().sum();
        DispatchResult {
            production,
            ramps,
            price,
            feasible,
            served,
        }
    };

    if demand < total_lo - tol || demand > total_hi + tol {
        if !fallback_clip {
            return Err(Error::Infeasible(format!(
                "demand {demand} outside the reachable supply [{total_lo}, {total_hi}]"
            )));
        }
        let n = suppliers.len();
        return Ok(if demand > total_hi {
            let price = (0..n).map(|i| mc(i, bounds[i].1)).fold(f64::NEG_INFINITY, f64::max);
            finish(bounds.iter().map(|b| b.1).collect(), price, false)
        } else {
            let price = (0..n).map(|i| mc(i, bounds[i].0)).fold(f64::INFINITY, f64::min);
            finish(bounds.iter().map(|b| b.0).collect(), price, false)
        });
    }
    if demand <= total_lo + tol {
        let price = (0..suppliers.len())
            .map(|i| mc(i, bounds[i].0))
            .fold(f64::INFINITY, f64::min);
        return Ok(finish(bounds.iter().map(|b| b.0).collect(), price, true));
    }

    let mut breaks: Vec<f64> = (0..suppliers.len())
        .flat_map(|i| [mc(i, bounds[i].0), mc(i, bounds[i].1)])
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // First breakpoint at which supply reaches the demand.
    let j = breaks
        .iter()
        .position(|&p| supply_at(p, suppliers, &bounds) >= demand - tol)
        .unwrap_or(breaks.len() - 1);
    let price = if j == 0 {
        breaks[0]
    } else {
        let (p0, p1) = (breaks[j - 1], breaks[j]);
        let (s0, s1) = (supply_at(p0, suppliers, &bounds), supply_at(p1, suppliers, &bounds));
        if s1 - s0 <= 0.0 {
            p1
        } else {
            (p0 + (demand - s0) / (s1 - s0) * (p1 - p0)).clamp(p0, p1)
        }
    };
    let mut production: Vec<f64> = suppliers
        .iter()
        .zip(&bounds)
        .map(|(s, &(lo, hi))| ((price - s.c2 - s.c4) / (2.0 * s.c1)).clamp(lo, hi))
        .collect();
    // Put the rounding residual on a supplier strictly inside its bounds.
    let residual = demand - production.iter().sum::<f64>();
    if let Some(i) = (0..production.len()).find(|&i| {
        let (lo, hi) = bounds[i];
        production[i] > lo && production[i] < hi
    }) {
        production[i] = (production[i] + residual).clamp(bounds[i].0, bounds[i].1);
    }
    Ok(finish(production, price, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    /// Clip unreachable demand instead of failing. Clipped periods are flagged.
    pub fallback_clip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub prices: Vec<f64>,
    pub demand: Vec<f64>,
    /// Per agent, the applied controls (consumption or ramp).
    pub controls: Vec<Vec<f64>>,
    pub injections: Vec<Vec<f64>>,
    /// Per agent `x(0..T)`.
    pub states: Vec<Vec<f64>>,
    /// Periods in which the fallback clipped the dispatch.
    pub clipped: Vec<bool>,
    pub welfare: f64,
}

impl BaselineOutcome {
    pub fn any_clipped(&self) -> bool {
        self.clipped.iter().any(|&c| c)
    }
}

/// Rolls the thermostat-plus-dispatch scheme along a disturbance sequence.
///
/// When the fallback has to shed load, every consumer's consumption is scaled
/// by the served fraction; when supply cannot ramp down far enough, the
/// surplus is spilled and consumption is left unchanged.
pub fn baseline_rollout(
    population: &Population,
    x0: &[f64],
    disturbances: &[Disturbance],
    settings: &BaselineSettings,
) -> Result<BaselineOutcome> {
    let n = population.n();
    let m = population.m();
    if x0.len() != n {
        return Err(Error::InvalidInput(format!("{} initial states for {n} agents", x0.len())));
    }
    let horizon = disturbances.len();
    let mut states: Vec<Vec<f64>> = x0.iter().map(|&x| vec![x]).collect();
    let mut controls = vec![Vec::with_capacity(horizon); n];
    let mut injections = vec![Vec::with_capacity(horizon); n];
    let mut prices = Vec::with_capacity(horizon);
    let mut demand = Vec::with_capacity(horizon);
    let mut clipped = Vec::with_capacity(horizon);

    for d in disturbances {
        let mut consumption: Vec<f64> = population
            .consumers
            .iter()
            .zip(&states[..m])
            .map(|(c, x)| thermostat_demand(c, *x.last().expect("state"), d.w))
            .collect();
        let total: f64 = consumption.iter().sum();
        let previous: Vec<f64> = states[m..].iter().map(|x| *x.last().expect("state")).collect();
        let dispatch = greedy_dispatch(&population.suppliers, &previous, d.v, total, settings.fallback_clip)?;
        if !dispatch.feasible && dispatch.served < total && total > 0.0 {
            let scale = dispatch.served / total;
            consumption.iter_mut().for_each(|u| *u *= scale);
        }
        for (i, (c, &u)) in population.consumers.iter().zip(&consumption).enumerate() {
            let x = *states[i].last().expect("state");
            states[i].push(c.next_state(x, u, d.w));
            controls[i].push(u);
            injections[i].push(-u);
        }
        for (j, (&x, &r)) in dispatch.production.iter().zip(&dispatch.ramps).enumerate() {
            let i = m + j;
            states[i].push(x);
            controls[i].push(r);
            injections[i].push(x);
        }
        prices.push(dispatch.price);
        demand.push(total);
        clipped.push(!dispatch.feasible);
    }

    let welfare = population
        .agents()
        .iter()
        .zip(controls.iter().zip(&states))
        .map(|(a, (u, x))| {
            u.iter()
                .zip(&x[1..])
                .map(|(&u, &x)| a.stage_utility(x, u))
                .sum::<f64>()
        })
        .sum();
    Ok(BaselineOutcome {
        prices,
        demand,
        controls,
        injections,
        states,
        clipped,
        welfare,
    })
}
