use std::io::Write;

use rayon::prelude::*;

use super::tree::ScenarioTree;
use crate::agent::Population;
use crate::error::{Error, Result};
use crate::market::{max_abs, ClearSettings, MarketStatus};
use crate::optimizer::{tree_best_response, ControlPolicy, PriceSchedule, TreeResponse, TreeSolver};

/// Price per tree node. Entry 0 (the root) carries no decision and is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePolicy {
    pub prices: Vec<f64>,
}

impl PricePolicy {
    pub fn new(tree: &ScenarioTree, prices: Vec<f64>) -> Result<Self> {
        if prices.len() != tree.len() {
            return Err(Error::HorizonMismatch {
                expected: tree.len(),
                found: prices.len(),
            });
        }
        if prices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("prices must be finite".into()));
        }
        Ok(Self { prices })
    }

    pub fn constant(tree: &ScenarioTree, value: f64) -> Self {
        let mut prices = vec![value; tree.len()];
        prices[ScenarioTree::ROOT] = 0.0;
        Self { prices }
    }

    /// Price of every depth-`t` node set to `schedule.lambda[t-1]`.
    pub fn from_schedule(tree: &ScenarioTree, schedule: &PriceSchedule) -> Result<Self> {
        if schedule.horizon() != tree.horizon {
            return Err(Error::HorizonMismatch {
                expected: tree.horizon,
                found: schedule.horizon(),
            });
        }
        let prices = tree
            .nodes
            .iter()
            .map(|n| if n.depth == 0 { 0.0 } else { schedule.lambda[n.depth - 1] })
            .collect();
        Ok(Self { prices })
    }

    /// Prices along the path ending at `node`, in period order.
    pub fn along(&self, tree: &ScenarioTree, node: usize) -> Vec<f64> {
        tree.path(node).into_iter().map(|n| self.prices[n]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticIterate {
    pub iteration: usize,
    pub prices: Vec<f64>,
    pub imbalance: Vec<f64>,
    pub imbalance_norm: f64,
    pub dual_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticOutcome {
    pub prices: PricePolicy,
    /// One control policy per agent, in agent order.
    pub policies: Vec<ControlPolicy>,
    /// Node-indexed aggregate injection.
    pub imbalance: Vec<f64>,
    pub iterations: usize,
    pub status: MarketStatus,
    pub iterate_log: Vec<StochasticIterate>,
    pub expected_welfare: f64,
    pub dual_value: f64,
}

impl StochasticOutcome {
    pub fn converged(&self) -> bool {
        self.status == MarketStatus::Converged
    }

    /// Writes `iteration,node,depth,lambda,imbalance,dual_value`.
    pub fn write_iterate_log<W: Write>(&self, tree: &ScenarioTree, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,node,depth,lambda,imbalance,dual_value")?;
        for rec in &self.iterate_log {
            for n in tree.nodes.iter().skip(1) {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    rec.iteration, n.id, n.depth, rec.prices[n.id], rec.imbalance[n.id], rec.dual_value
                )?;
            }
        }
        Ok(())
    }
}

/// Exact expectation of total stage utility over the tree.
pub fn expected_welfare(policies: &[ControlPolicy], tree: &ScenarioTree, population: &Population) -> Result<f64> {
    let agents = population.agents();
    if policies.len() != agents.len() {
        return Err(Error::InvalidInput(format!(
            "{} policies for {} agents",
            policies.len(),
            agents.len()
        )));
    }
    for p in policies {
        if p.controls.len() != tree.len() {
            return Err(Error::HorizonMismatch {
                expected: tree.len(),
                found: p.controls.len(),
            });
        }
    }
    Ok(policies.iter().zip(&agents).map(|(p, a)| p.utility(a, tree)).sum())
}

/// Price iteration over node-indexed prices. The update at node `n` is
/// `lambda(n) -= alpha_k * P(n) * I(n)`, the dual gradient under expectation.
pub fn stochastic_clear(
    population: &Population,
    x0: &[f64],
    tree: &ScenarioTree,
    lambda0: &PricePolicy,
    settings: &ClearSettings,
    solver: &TreeSolver,
) -> Result<StochasticOutcome> {
    let agents = population.agents();
    if x0.len() != agents.len() {
        return Err(Error::InvalidInput(format!(
            "{} initial states for {} agents",
            x0.len(),
            agents.len()
        )));
    }
    if lambda0.prices.len() != tree.len() {
        return Err(Error::HorizonMismatch {
            expected: tree.len(),
            found: lambda0.prices.len(),
        });
    }
    let v = settings.violations();
    if !v.is_empty() {
        return Err(Error::InvalidInput(v.join("; ")));
    }

    let respond = |prices: &PricePolicy| -> Result<Vec<TreeResponse>> {
        let one = |(agent, &x)| tree_best_response(agent, x, prices, tree, solver);
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
        let mut imb = vec![0.0; tree.len()];
        for r in &responses {
            for (acc, v) in imb.iter_mut().zip(&r.policy.injections).skip(1) {
                *acc += v;
            }
        }
        let norm = max_abs(&imb[1..]);
        let dual_value: f64 = responses.iter().map(|r| r.value).sum();
        log.push(StochasticIterate {
            iteration: k,
            prices: prices.prices.clone(),
            imbalance: imb.clone(),
            imbalance_norm: norm,
            dual_value,
        });
        let converged = norm < settings.tol_balance;
        if converged || k + 1 >= settings.max_iters {
            let policies: Vec<ControlPolicy> = responses.into_iter().map(|r| r.policy).collect();
            let welfare = expected_welfare(&policies, tree, population)?;
            return Ok(StochasticOutcome {
                prices,
                policies,
                imbalance: imb,
                iterations: k + 1,
                status: if converged {
                    MarketStatus::Converged
                } else {
                    MarketStatus::MaxIters
                },
                iterate_log: log,
                expected_welfare: welfare,
                dual_value,
            });
        }
        let alpha = settings.rule.step(k);
        for n in tree.nodes.iter().skip(1) {
            let p = &mut prices.prices[n.id];
            *p -= alpha * n.probability * imb[n.id];
            if settings.nonneg_prices {
                *p = p.max(0.0);
            }
        }
        k += 1;
    }
}
