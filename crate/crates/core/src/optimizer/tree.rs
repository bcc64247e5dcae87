//! Best responses to node-indexed price policies on a scenario tree.
//!
//! The default solver is backward induction on a uniform state grid: the
//! value of each node is tabulated at the grid points, children values are
//! linearly interpolated, and each node's one-dimensional decision is
//! maximized exactly against the piecewise-linear continuation. The control
//! actually taken at a node is recomputed at the realized state during the
//! forward pass, so only continuation values carry interpolation error.
//!
//! [`TreeSolver::Exact`] instead solves the node-indexed QP directly. It is
//! exact but dense, so it is meant for small trees.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::transition_band;
use crate::agent::AgentSpec;
use crate::error::{Error, Result};
use crate::qp::QuadraticProgram;
use crate::stochastic::{PricePolicy, ScenarioTree};

pub const DEFAULT_GRID_POINTS: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TreeSolver {
    /// Grid dynamic programming. Without `bounds` the grid spans the set of
    /// states reachable under any admissible controls.
    GridDp {
        points: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<[f64; 2]>,
    },
    Exact,
}

impl Default for TreeSolver {
    fn default() -> Self {
        TreeSolver::GridDp {
            points: DEFAULT_GRID_POINTS,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl StateGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!(
                "state grid [{lo}, {hi}] with {points} points is degenerate"
            )));
        }
        Ok(Self { lo, hi, points })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        if j + 1 == self.points {
            self.hi
        } else {
            self.lo + j as f64 * self.spacing()
        }
    }

    /// Index of the cell `[point(j), point(j+1)]` containing `y`.
    fn cell(&self, y: f64) -> usize {
        let j = ((y - self.lo) / self.spacing()).floor();
        (j.max(0.0) as usize).min(self.points - 2)
    }

    fn interpolate(&self, values: &[f64], y: f64) -> f64 {
        let j = self.cell(y);
        let (y0, y1) = (self.point(j), self.point(j + 1));
        let s = ((y - y0) / (y1 - y0)).clamp(0.0, 1.0);
        if s == 0.0 {
            values[j]
        } else if s == 1.0 {
            values[j + 1]
        } else {
            values[j] + s * (values[j + 1] - values[j])
        }
    }

    /// Interval of states reachable from `x0` within `horizon` transitions.
    pub fn reachable(agent: &AgentSpec, x0: f64, tree: &ScenarioTree, points: usize) -> Result<Self> {
        let a = agent.retention();
        let (c_lo, c_hi) = tree
            .outcomes
            .iter()
            .map(|&d| agent.drift(d))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(c), h.max(c)));
        let b = agent.control_gain();
        let (ulo, uhi) = agent.control_box();
        let (e_lo, e_hi) = ((b * ulo).min(b * uhi), (b * ulo).max(b * uhi));
        let (mut lo, mut hi) = (x0, x0);
        let (mut all_lo, mut all_hi) = (x0, x0);
        for _ in 0..tree.horizon {
            let (m1, m2) = (a * lo, a * hi);
            lo = m1.min(m2) + e_lo + c_lo;
            hi = m1.max(m2) + e_hi + c_hi;
            if let Some(floor) = agent.state_floor() {
                lo = lo.max(floor);
                hi = hi.max(floor);
            }
            all_lo = all_lo.min(lo);
            all_hi = all_hi.max(hi);
        }
        let pad = 1e-9 * (1.0 + all_lo.abs().max(all_hi.abs()));
        if all_hi - all_lo < 1e-6 {
            return StateGrid::new(all_lo - 0.5, all_hi + 0.5, points);
        }
        let lo = match agent.state_floor() {
            Some(floor) if all_lo <= floor => floor,
            _ => all_lo - pad,
        };
        StateGrid::new(lo, all_hi + pad, points)
    }
}

/// Node-indexed controls of one agent. Entry 0 (the root) is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolicy {
    pub controls: Vec<f64>,
    /// Pre-decision state at each node; the root holds the initial state.
    pub states: Vec<f64>,
    /// Post-decision state at each node.
    pub next_states: Vec<f64>,
    pub injections: Vec<f64>,
}

impl ControlPolicy {
    /// Simulates node controls through the tree.
    pub fn from_controls(agent: &AgentSpec, x0: f64, tree: &ScenarioTree, controls: Vec<f64>) -> Self {
        let n = tree.len();
        let mut states = vec![x0; n];
        let mut next_states = vec![x0; n];
        let mut injections = vec![0.0; n];
        for node in tree.nodes.iter().skip(1) {
            let x = next_states[node.parent.expect("non-root")];
            let u = controls[node.id];
            let y = agent.transition(x, u, tree.disturbance(node.id));
            states[node.id] = x;
            next_states[node.id] = y;
            injections[node.id] = agent.injection(u, y);
        }
        next_states[ScenarioTree::ROOT] = x0;
        Self {
            controls,
            states,
            next_states,
            injections,
        }
    }

    /// Expected objective including payments.
    pub fn value(&self, agent: &AgentSpec, tree: &ScenarioTree, prices: &PricePolicy) -> f64 {
        tree.nodes
            .iter()
            .skip(1)
            .map(|n| {
                let i = n.id;
                n.probability
                    * (agent.stage_utility(self.next_states[i], self.controls[i])
                        + prices.prices[i] * self.injections[i])
            })
            .sum()
    }

    /// Expected stage utility without payments.
    pub fn utility(&self, agent: &AgentSpec, tree: &ScenarioTree) -> f64 {
        tree.nodes
            .iter()
            .skip(1)
            .map(|n| n.probability * agent.stage_utility(self.next_states[n.id], self.controls[n.id]))
            .sum()
    }

    /// Errors unless every node control is admissible from its state.
    pub fn check_feasible(&self, agent: &AgentSpec, tree: &ScenarioTree) -> Result<()> {
        for n in tree.nodes.iter().skip(1) {
            agent.step(self.states[n.id], self.controls[n.id], tree.disturbance(n.id))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeResponse {
    pub policy: ControlPolicy,
    pub value: f64,
}

pub fn tree_best_response(
    agent: &AgentSpec,
    x0: f64,
    prices: &PricePolicy,
    tree: &ScenarioTree,
    solver: &TreeSolver,
) -> Result<TreeResponse> {
    if prices.prices.len() != tree.len() {
        return Err(Error::HorizonMismatch {
            expected: tree.len(),
            found: prices.prices.len(),
        });
    }
    let controls = match *solver {
        TreeSolver::GridDp { points, bounds } => {
            let grid = match bounds {
                Some([lo, hi]) => StateGrid::new(lo, hi, points)?,
                None => StateGrid::reachable(agent, x0, tree, points)?,
            };
            grid_dp(agent, x0, prices, tree, &grid)?
        }
        TreeSolver::Exact => exact(agent, x0, prices, tree)?,
    };
    let policy = ControlPolicy::from_controls(agent, x0, tree, controls);
    let value = policy.value(agent, tree, prices);
    Ok(TreeResponse { policy, value })
}

/// Per-node decision data shared by the backward and forward passes.
struct NodeDecision<'a> {
    agent: &'a AgentSpec,
    grid: &'a StateGrid,
    /// Conditional-expected continuation at grid points (empty at leaves).
    cont: &'a [f64],
    /// Feasible grid-index range of `cont`.
    cont_range: (usize, usize),
    price: f64,
    d: crate::agent::Disturbance,
}

enum Choice {
    Infeasible,
    /// Post-decision state, objective value, whether the grid edge bound it.
    At(f64, f64, bool),
}

impl NodeDecision<'_> {
    fn continuation(&self, y: f64) -> f64 {
        if self.cont.is_empty() {
            0.0
        } else {
            self.grid.interpolate(self.cont, y)
        }
    }

    fn slope(&self, j: usize) -> f64 {
        if self.cont.is_empty() {
            0.0
        } else {
            (self.cont[j + 1] - self.cont[j]) / (self.grid.point(j + 1) - self.grid.point(j))
        }
    }

    fn decide(&self, x: f64) -> Choice {
        let agent = self.agent;
        let a = agent.retention();
        let b = agent.control_gain();
        let c = agent.drift(self.d);
        let (ulo, uhi) = agent.control_bounds(x, self.d);
        if ulo > uhi {
            return Choice::Infeasible;
        }
        let (y1, y2) = (a * x + b * ulo + c, a * x + b * uhi + c);
        let (phys_lo, phys_hi) = (y1.min(y2), y1.max(y2));
        let (mut lo, mut hi) = (phys_lo.max(self.grid.lo), phys_hi.min(self.grid.hi));
        if !self.cont.is_empty() {
            lo = lo.max(self.grid.point(self.cont_range.0));
            hi = hi.min(self.grid.point(self.cont_range.1));
        }
        if lo > hi {
            return Choice::Infeasible;
        }
        let consumer = agent.is_consumer();
        let kappa = agent.control_slope() + if consumer { -self.price } else { 0.0 };
        let pi = if consumer { 0.0 } else { self.price };
        // d/dy of the smooth part is -2 w y + lin.
        let lin = agent.utility_slope(0.0) + pi + kappa / b;
        let two_w = 2.0 * agent.curvature();
        let smooth = |y: f64| -two_w * y + lin;

        let y = if self.cont.is_empty() {
            (lin / two_w).clamp(lo, hi)
        } else {
            let (j_lo, j_hi) = (self.grid.cell(lo), self.grid.cell(hi));
            let right = |j: usize| self.grid.point(j + 1).min(hi);
            let left = |j: usize| self.grid.point(j).max(lo);
            // First cell whose right-end derivative is nonpositive.
            let (mut a_, mut b_) = (j_lo, j_hi + 1);
            while a_ < b_ {
                let mid = (a_ + b_) / 2;
                if smooth(right(mid)) + self.slope(mid) <= 0.0 {
                    b_ = mid;
                } else {
                    a_ = mid + 1;
                }
            }
            if a_ > j_hi {
                hi
            } else {
                let s = self.slope(a_);
                if smooth(left(a_)) + s <= 0.0 {
                    left(a_)
                } else {
                    ((lin + s) / two_w).clamp(left(a_), right(a_))
                }
            }
        };
        let u = (y - a * x - c) / b;
        let value = agent.stage_utility(y, u) + self.price * agent.injection(u, y) + self.continuation(y);
        let slack = 1e-9 * (1.0 + self.grid.lo.abs().max(self.grid.hi.abs()));
        let pull = smooth(y) + self.slope(self.grid.cell(y));
        let edge = (y <= self.grid.lo && phys_lo < self.grid.lo - slack && pull < 0.0)
            || (y >= self.grid.hi && phys_hi > self.grid.hi + slack && pull > 0.0);
        Choice::At(y, value, edge)
    }
}

fn finite_range(values: &[f64]) -> Option<(usize, usize)> {
    let first = values.iter().position(|v| v.is_finite())?;
    let last = values.iter().rposition(|v| v.is_finite())?;
    Some((first, last))
}

fn grid_dp(
    agent: &AgentSpec,
    x0: f64,
    prices: &PricePolicy,
    tree: &ScenarioTree,
    grid: &StateGrid,
) -> Result<Vec<f64>> {
    let n = tree.len();
    let p = grid.points;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut conts: Vec<Vec<f64>> = vec![Vec::new(); n];

    // Breadth-first ids: children always follow their parent.
    for id in (1..n).rev() {
        let node = &tree.nodes[id];
        let cont = continuation(tree, node.id, &values, p);
        let range = if cont.is_empty() {
            (0, p - 1)
        } else {
            match finite_range(&cont) {
                Some(r) => r,
                None => {
                    values[id] = vec![f64::NEG_INFINITY; p];
                    continue;
                }
            }
        };
        let dec = NodeDecision {
            agent,
            grid,
            cont: &cont,
            cont_range: range,
            price: prices.prices[id],
            d: tree.disturbance(id),
        };
        values[id] = (0..p)
            .map(|j| match dec.decide(grid.point(j)) {
                Choice::Infeasible => f64::NEG_INFINITY,
                Choice::At(_, v, _) => v,
            })
            .collect();
        conts[id] = cont;
        // Children tables are no longer needed once folded into the parent's continuation.
        for &c in &node.children {
            values[c] = Vec::new();
        }
    }

    let mut controls = vec![0.0; n];
    let mut pre = vec![x0; n];
    let tol = 1e-9 * (1.0 + grid.lo.abs().max(grid.hi.abs()));
    for node in tree.nodes.iter().skip(1) {
        let id = node.id;
        let x = pre[id];
        if x < grid.lo - tol || x > grid.hi + tol {
            return Err(Error::GridResolution {
                state: x,
                lo: grid.lo,
                hi: grid.hi,
                depth: node.depth,
            });
        }
        let cont = &conts[id];
        let range = if cont.is_empty() { (0, p - 1) } else { finite_range(cont).unwrap_or((0, 0)) };
        let dec = NodeDecision {
            agent,
            grid,
            cont,
            cont_range: range,
            price: prices.prices[id],
            d: tree.disturbance(id),
        };
        let y = match dec.decide(x) {
            Choice::Infeasible => {
                return Err(Error::GridResolution {
                    state: x,
                    lo: grid.lo,
                    hi: grid.hi,
                    depth: node.depth,
                })
            }
            Choice::At(y, _, true) => {
                return Err(Error::GridResolution {
                    state: y,
                    lo: grid.lo,
                    hi: grid.hi,
                    depth: node.depth + 1,
                })
            }
            Choice::At(y, _, false) => y,
        };
        let d = tree.disturbance(id);
        let (ulo, uhi) = agent.control_bounds(x, d);
        let u = ((y - agent.retention() * x - agent.drift(d)) / agent.control_gain()).clamp(ulo, uhi);
        controls[id] = u;
        let next = agent.transition(x, u, d);
        for &c in &node.children {
            pre[c] = next;
        }
    }
    Ok(controls)
}

fn continuation(tree: &ScenarioTree, id: usize, values: &[Vec<f64>], p: usize) -> Vec<f64> {
    let node = &tree.nodes[id];
    if node.children.is_empty() {
        return Vec::new();
    }
    let mut cont = vec![0.0; p];
    for &c in &node.children {
        let q = tree.nodes[c].conditional;
        for (acc, v) in cont.iter_mut().zip(&values[c]) {
            *acc += q * v;
        }
    }
    cont
}

/// Node-indexed QP in post-decision coordinates.
fn exact(agent: &AgentSpec, x0: f64, prices: &PricePolicy, tree: &ScenarioTree) -> Result<Vec<f64>> {
    let n = tree.len() - 1;
    let a = agent.retention();
    let b = agent.control_gain();
    let w = agent.curvature();
    let lin_utility = agent.utility_slope(0.0);
    let consumer = agent.is_consumer();
    let kappa = |id: usize| agent.control_slope() + if consumer { -prices.prices[id] } else { 0.0 };

    let mut hdiag = DVector::zeros(n);
    let mut linear = DVector::zeros(n);
    let mut ineq = Vec::with_capacity(3 * n);
    for node in tree.nodes.iter().skip(1) {
        let k = node.id - 1;
        let p = node.probability;
        hdiag[k] = 2.0 * w * p;
        let pi = if consumer { 0.0 } else { prices.prices[node.id] };
        let mut coef = p * (lin_utility + pi + kappa(node.id) / b);
        for &c in &node.children {
            coef -= tree.nodes[c].probability * a * kappa(c) / b;
        }
        linear[k] = -coef;

        let band = transition_band(agent, tree.disturbance(node.id));
        let parent = node.parent.expect("non-root");
        let carry = if parent == ScenarioTree::ROOT { a * x0 } else { 0.0 };
        let mut row = vec![0.0; n];
        row[k] = 1.0;
        if parent != ScenarioTree::ROOT {
            row[parent - 1] = -a;
        }
        ineq.push((row.clone(), band.lo + carry));
        ineq.push((row.iter().map(|v| -v).collect(), -(band.hi + carry)));
        if let Some(floor) = agent.state_floor() {
            let mut r = vec![0.0; n];
            r[k] = 1.0;
            ineq.push((r, floor));
        }
    }
    let sol = QuadraticProgram::with_rows(DMatrix::from_diagonal(&hdiag), linear, &[], &ineq).solve()?;
    let mut controls = vec![0.0; tree.len()];
    let mut pre = vec![x0; tree.len()];
    for node in tree.nodes.iter().skip(1) {
        let x = pre[node.id];
        let d = tree.disturbance(node.id);
        let (ulo, uhi) = agent.control_bounds(x, d);
        let u = ((sol.x[node.id - 1] - a * x - agent.drift(d)) / b).clamp(ulo, uhi);
        controls[node.id] = u;
        let next = agent.transition(x, u, d);
        for &c in &node.children {
            pre[c] = next;
        }
    }
    Ok(controls)
}
