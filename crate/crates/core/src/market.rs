//! Deterministic market clearing by subgradient price iteration.
//!
//! The coordinator announces a price per period, every agent answers with
//! its best response, and prices move against the aggregate injection:
//!
//! ```text
//!     lambda'(t) = lambda(t) - alpha_k * sum_i injection_i(t)
//! ```
//!
//! A surplus lowers the price and a deficit raises it. The iteration stops
//! once the largest per-period imbalance is below `tol_balance`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Disturbance, Population};
use crate::error::{Error, Result};
use crate::optimizer::{best_response_with, BestResponse, ControlTrajectory, PriceSchedule, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    Constant { alpha0: f64 },
    /// `alpha0 / sqrt(k + 1)` at iteration `k`.
    Diminishing { alpha0: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Diminishing { alpha0: 0.2 }
    }
}

impl StepRule {
    pub fn alpha0(&self) -> f64 {
        match *self {
            StepRule::Constant { alpha0 } | StepRule::Diminishing { alpha0 } => alpha0,
        }
    }

    pub fn with_alpha0(&self, alpha0: f64) -> Self {
        match self {
            StepRule::Constant { .. } => StepRule::Constant { alpha0 },
            StepRule::Diminishing { .. } => StepRule::Diminishing { alpha0 },
        }
    }

    /// Step size at iteration `k` (counting from zero).
    pub fn step(&self, k: usize) -> f64 {
        match *self {
            StepRule::Constant { alpha0 } => alpha0,
            StepRule::Diminishing { alpha0 } => alpha0 / ((k + 1) as f64).sqrt(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let a = self.alpha0();
        if a > 0.0 && a.is_finite() {
            Vec::new()
        } else {
            vec![format!("step size alpha0 = {a} must be positive")]
        }
    }
}

/// Settings shared by every clearing loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClearSettings {
    pub rule: StepRule,
    pub tol_balance: f64,
    pub max_iters: usize,
    /// Project prices onto `lambda >= 0` after every update.
    pub nonneg_prices: bool,
    pub solver: SolverSettings,
    /// Fan the per-agent best responses out over the rayon pool.
    pub parallel: bool,
}

impl Default for ClearSettings {
    fn default() -> Self {
        Self {
            rule: StepRule::default(),
            tol_balance: 1e-3,
            max_iters: 500,
            nonneg_prices: false,
            solver: SolverSettings::default(),
            parallel: false,
        }
    }
}

impl ClearSettings {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.rule.violations();
        if !(self.tol_balance > 0.0) {
            out.push(format!("tol_balance = {} must be positive", self.tol_balance));
        }
        if self.max_iters == 0 {
            out.push("max_iters must be at least 1".into());
        }
        if !(self.solver.tol_opt > 0.0) {
            out.push(format!("tol_opt = {} must be positive", self.solver.tol_opt));
        }
        if self.solver.max_iters == 0 {
            out.push("solver max_iters must be at least 1".into());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarketStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub iteration: usize,
    pub prices: Vec<f64>,
    pub imbalance: Vec<f64>,
    /// Largest absolute per-period imbalance.
    pub imbalance_norm: f64,
    /// Sum of agent values at these prices.
    pub dual_value: f64,
    /// Frobenius norm of the consumer bids.
    pub dr_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketOutcome {
    /// Prices the final bids respond to.
    pub prices: PriceSchedule,
    pub bids: Vec<ControlTrajectory>,
    /// Per agent `x(0..T)`.
    pub states: Vec<Vec<f64>>,
    pub imbalance: Vec<f64>,
    pub iterations: usize,
    pub status: MarketStatus,
    pub iterate_log: Vec<IterateRecord>,
    /// Total stage utility without payments.
    pub social_welfare: f64,
    pub dual_value: f64,
}

impl MarketOutcome {
    pub fn converged(&self) -> bool {
        self.status == MarketStatus::Converged
    }

    /// Net payment flow `sum_{i,t} lambda(t) * injection_i(t)`.
    pub fn net_payments(&self) -> f64 {
        self.bids
            .iter()
            .map(|b| b.injections.iter().zip(&self.prices.lambda).map(|(u, p)| u * p).sum::<f64>())
            .sum()
    }

    /// Writes `iteration,t,lambda,imbalance,dual_value`, one row per period and iterate.
    pub fn write_iterate_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,t,lambda,imbalance,dual_value")?;
        for rec in &self.iterate_log {
            for (t, (p, i)) in rec.prices.iter().zip(&rec.imbalance).enumerate() {
                writeln!(out, "{},{},{},{},{}", rec.iteration, t + 1, p, i, rec.dual_value)?;
            }
        }
        Ok(())
    }
}

/// Per-period sum of injections, accumulated in agent order.
pub fn imbalance(bids: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = bids.first() else {
        return Ok(Vec::new());
    };
    let mut total = vec![0.0; first.len()];
    for b in bids {
        if b.len() != total.len() {
            return Err(Error::HorizonMismatch {
                expected: total.len(),
                found: b.len(),
            });
        }
        for (acc, v) in total.iter_mut().zip(b) {
            *acc += v;
        }
    }
    Ok(total)
}

pub fn price_update(
    prices: &PriceSchedule,
    imbalance: &[f64],
    rule: &StepRule,
    k: usize,
    nonneg: bool,
) -> Result<PriceSchedule> {
    if imbalance.len() != prices.horizon() {
        return Err(Error::HorizonMismatch {
            expected: prices.horizon(),
            found: imbalance.len(),
        });
    }
    let alpha = rule.step(k);
    let lambda = prices
        .lambda
        .iter()
        .zip(imbalance)
        .map(|(p, i)| {
            let next = p - alpha * i;
            if nonneg {
                next.max(0.0)
            } else {
                next
            }
        })
        .collect();
    Ok(PriceSchedule { lambda })
}

/// Frobenius norm of a stack of consumer control trajectories.
pub fn demand_response_norm(bids: &[Vec<f64>]) -> f64 {
    bids.iter().flatten().map(|u| u * u).sum::<f64>().sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Clears a market without disturbances.
pub fn clear_market(
    population: &Population,
    x0: &[f64],
    lambda0: &PriceSchedule,
    settings: &ClearSettings,
) -> Result<MarketOutcome> {
    let dist = vec![Disturbance::ZERO; lambda0.horizon()];
    clear_market_with(population, x0, lambda0, &dist, settings)
}

/// Clears a market in which the disturbance sequence is known to everyone.
pub fn clear_market_with(
    population: &Population,
    x0: &[f64],
    lambda0: &PriceSchedule,
    disturbances: &[Disturbance],
    settings: &ClearSettings,
) -> Result<MarketOutcome> {
    let agents = population.agents();
    if agents.is_empty() {
        return Err(Error::InvalidCounts { m: 0, n: 0 });
    }
    if x0.len() != agents.len() {
        return Err(Error::InvalidInput(format!(
            "{} initial states for {} agents",
            x0.len(),
            agents.len()
        )));
    }
    if lambda0.horizon() == 0 {
        return Err(Error::InvalidInput("horizon must be at least one period".into()));
    }
    if disturbances.len() != lambda0.horizon() {
        return Err(Error::HorizonMismatch {
            expected: lambda0.horizon(),
            found: disturbances.len(),
        });
    }
    let v = settings.violations();
    if !v.is_empty() {
        return Err(Error::InvalidInput(v.join("; ")));
    }
    let m = population.m();

    let respond = |prices: &PriceSchedule| -> Result<Vec<BestResponse>> {
        let one = |(agent, &x)| best_response_with(agent, x, &prices.lambda, disturbances, &settings.solver);
        if settings.parallel {
            agents.par_iter().zip(x0.par_iter()).map(one).collect()
        } else {
            agents.iter().zip(x0.iter()).map(one).collect()
        }
    };

    let mut prices = lambda0.clone();
    let mut log = Vec::new();
    let mut k = 0;
    loop {
        let responses = respond(&prices)?;
        let injections: Vec<Vec<f64>> = responses.iter().map(|r| r.trajectory.injections.clone()).collect();
        let imb = imbalance(&injections)?;
        let norm = max_abs(&imb);
        let dual_value: f64 = responses.iter().map(|r| r.value).sum();
        let dr_norm = demand_response_norm(
            &responses[..m].iter().map(|r| r.trajectory.controls.clone()).collect::<Vec<_>>(),
        );
        log.push(IterateRecord {
            iteration: k,
            prices: prices.lambda.clone(),
            imbalance: imb.clone(),
            imbalance_norm: norm,
            dual_value,
            dr_norm,
        });
        let converged = norm < settings.tol_balance;
        if converged || k + 1 >= settings.max_iters {
            let social_welfare = responses.iter().zip(&agents).map(|(r, a)| r.utility(a)).sum();
            let states = responses.iter().map(|r| r.states.clone()).collect();
            let bids = responses.into_iter().map(|r| r.trajectory).collect();
            return Ok(MarketOutcome {
                prices,
                bids,
                states,
                imbalance: imb,
                iterations: k + 1,
                status: if converged {
                    MarketStatus::Converged
                } else {
                    MarketStatus::MaxIters
                },
                iterate_log: log,
                social_welfare,
                dual_value,
            });
        }
        prices = price_update(&prices, &imb, &settings.rule, k, settings.nonneg_prices)?;
        k += 1;
    }
}
