//! Price-taking best responses of a single agent.
//!
//! Given announced prices `lambda(1..T)`, an agent maximizes
//!
//! ```text
//!     sum_t  F(x(t+1), u(t)) + lambda(t) * injection(t)
//! ```
//!
//! over admissible controls, where `injection` is `-u` for consumers and the
//! new production level for suppliers. The problem has linear dynamics, a
//! strictly concave objective and polyhedral constraints, so the best
//! response is unique.
//!
//! Two solvers are provided. The default writes the problem in the
//! post-decision states, where the Hessian is diagonal, and hands it to the
//! dual active-set QP in [`crate::qp`]. The projected-gradient solver works on
//! the controls directly using the adjoint gradient from [`objective_gradient`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agent::{AgentSpec, AgentState, Disturbance};
use crate::error::{Error, Result};
use crate::qp::QuadraticProgram;

pub mod pg;
pub mod tree;

pub use tree::{tree_best_response, ControlPolicy, StateGrid, TreeResponse, TreeSolver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub lambda: Vec<f64>,
}

impl PriceSchedule {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prices must be finite".into()));
        }
        Ok(Self { lambda })
    }

    pub fn constant(horizon: usize, value: f64) -> Self {
        Self {
            lambda: vec![value; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.lambda.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTrajectory {
    /// Native controls: consumption for consumers, ramp for suppliers.
    pub controls: Vec<f64>,
    /// Grid-side injection per period.
    pub injections: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub trajectory: ControlTrajectory,
    /// `x(1..T+1)`; `states[0]` is the initial state.
    pub states: Vec<f64>,
    /// Objective including payments.
    pub value: f64,
    pub iterations: usize,
}

impl BestResponse {
    /// Sum of stage utilities without payments.
    pub fn utility(&self, agent: &AgentSpec) -> f64 {
        self.trajectory
            .controls
            .iter()
            .zip(&self.states[1..])
            .map(|(&u, &x)| agent.stage_utility(x, u))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    ActiveSet,
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub kind: SolverKind,
    /// Stopping threshold on the projected-gradient residual.
    pub tol_opt: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            kind: SolverKind::ActiveSet,
            tol_opt: 1e-8,
            max_iters: 5000,
        }
    }
}

/// One agent's horizon problem at fixed prices and disturbances.
#[derive(Debug, Clone, Copy)]
pub struct AgentProblem<'a> {
    pub agent: &'a AgentSpec,
    pub x0: f64,
    pub prices: &'a [f64],
    pub disturbances: &'a [Disturbance],
}

impl<'a> AgentProblem<'a> {
    pub fn new(
        agent: &'a AgentSpec,
        x0: f64,
        prices: &'a [f64],
        disturbances: &'a [Disturbance],
    ) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::InvalidInput("horizon must be at least one period".into()));
        }
        if disturbances.len() != prices.len() {
            return Err(Error::HorizonMismatch {
                expected: prices.len(),
                found: disturbances.len(),
            });
        }
        if !x0.is_finite() {
            return Err(Error::InvalidInput(format!("initial state {x0} is not finite")));
        }
        Ok(Self {
            agent,
            x0,
            prices,
            disturbances,
        })
    }

    pub fn horizon(&self) -> usize {
        self.prices.len()
    }

    pub fn simulate(&self, controls: &[f64]) -> Vec<f64> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        let mut x = self.x0;
        states.push(x);
        for (&u, &d) in controls.iter().zip(self.disturbances) {
            x = self.agent.transition(x, u, d);
            states.push(x);
        }
        states
    }

    pub fn injections(&self, controls: &[f64], states: &[f64]) -> Vec<f64> {
        controls
            .iter()
            .zip(&states[1..])
            .map(|(&u, &x)| self.agent.injection(u, x))
            .collect()
    }

    /// Objective with payments.
    pub fn objective(&self, controls: &[f64]) -> f64 {
        let states = self.simulate(controls);
        controls
            .iter()
            .zip(&states[1..])
            .zip(self.prices)
            .map(|((&u, &x), &p)| self.agent.stage_utility(x, u) + p * self.agent.injection(u, x))
            .sum()
    }

    /// Gradient of [`Self::objective`] with respect to the controls, by a
    /// backward costate pass through the linear dynamics.
    pub fn gradient(&self, controls: &[f64]) -> Vec<f64> {
        let states = self.simulate(controls);
        let a = self.agent.retention();
        let b = self.agent.control_gain();
        let consumer = self.agent.is_consumer();
        let t_len = controls.len();
        let mut grad = vec![0.0; t_len];
        let mut costate = 0.0;
        for t in (0..t_len).rev() {
            let mut dx = self.agent.utility_slope(states[t + 1]);
            if !consumer {
                dx += self.prices[t];
            }
            costate = dx + a * costate;
            let direct = self.agent.control_slope() + if consumer { -self.prices[t] } else { 0.0 };
            grad[t] = b * costate + direct;
        }
        grad
    }

    /// Errors unless every control is admissible along the simulated path.
    pub fn check_feasible(&self, controls: &[f64]) -> Result<()> {
        if controls.len() != self.horizon() {
            return Err(Error::HorizonMismatch {
                expected: self.horizon(),
                found: controls.len(),
            });
        }
        let mut x = self.x0;
        for (&u, &d) in controls.iter().zip(self.disturbances) {
            x = self.agent.step(x, u, d)?;
        }
        Ok(())
    }

    /// Clamps controls forward in time into the state-dependent admissible intervals.
    pub fn clip_feasible(&self, controls: &[f64]) -> Vec<f64> {
        let mut x = self.x0;
        controls
            .iter()
            .zip(self.disturbances)
            .map(|(&u, &d)| {
                let (lo, hi) = self.agent.control_bounds(x, d);
                let u = u.clamp(lo, hi.max(lo));
                x = self.agent.transition(x, u, d);
                u
            })
            .collect()
    }

    pub fn response(&self, controls: Vec<f64>, iterations: usize) -> BestResponse {
        let states = self.simulate(&controls);
        let injections = self.injections(&controls, &states);
        let value = self.objective(&controls);
        BestResponse {
            trajectory: ControlTrajectory {
                controls,
                injections,
            },
            states,
            value,
            iterations,
        }
    }

    pub fn solve(&self, settings: &SolverSettings) -> Result<BestResponse> {
        let (controls, iterations) = match settings.kind {
            SolverKind::ActiveSet => solve_active_set(self)?,
            SolverKind::ProjectedGradient => pg::solve(self, None, settings)?,
        };
        let controls = self.clip_feasible(&controls);
        Ok(self.response(controls, iterations))
    }
}

/// Best response to a deterministic price schedule (no disturbances).
pub fn best_response(
    agent: &AgentSpec,
    x0: AgentState,
    prices: &PriceSchedule,
    settings: &SolverSettings,
) -> Result<BestResponse> {
    let dist = vec![Disturbance::ZERO; prices.horizon()];
    AgentProblem::new(agent, x0.x, &prices.lambda, &dist)?.solve(settings)
}

/// Best response with a known disturbance sequence.
pub fn best_response_with(
    agent: &AgentSpec,
    x0: f64,
    prices: &[f64],
    disturbances: &[Disturbance],
    settings: &SolverSettings,
) -> Result<BestResponse> {
    AgentProblem::new(agent, x0, prices, disturbances)?.solve(settings)
}

/// Adjoint gradient of the best-response objective at `trajectory`.
pub fn objective_gradient(
    agent: &AgentSpec,
    x0: AgentState,
    prices: &PriceSchedule,
    trajectory: &ControlTrajectory,
) -> Result<Vec<f64>> {
    let dist = vec![Disturbance::ZERO; prices.horizon()];
    let problem = AgentProblem::new(agent, x0.x, &prices.lambda, &dist)?;
    if trajectory.controls.len() != problem.horizon() {
        return Err(Error::HorizonMismatch {
            expected: problem.horizon(),
            found: trajectory.controls.len(),
        });
    }
    Ok(problem.gradient(&trajectory.controls))
}

/// Linear-constraint description of one transition `y_t - a y_parent` in
/// post-decision coordinates, shared by the horizon and tree formulations.
pub(crate) struct TransitionRows {
    /// `y_t - a * y_parent` must lie in `[lo, hi]`.
    pub lo: f64,
    pub hi: f64,
}

pub(crate) fn transition_band(agent: &AgentSpec, d: Disturbance) -> TransitionRows {
    let b = agent.control_gain();
    let c = agent.drift(d);
    let (ulo, uhi) = agent.control_box();
    let (e1, e2) = (b * ulo, b * uhi);
    TransitionRows {
        lo: c + e1.min(e2),
        hi: c + e1.max(e2),
    }
}

/// Solves the horizon problem exactly in post-decision coordinates.
fn solve_active_set(problem: &AgentProblem) -> Result<(Vec<f64>, usize)> {
    let agent = problem.agent;
    let t_len = problem.horizon();
    let a = agent.retention();
    let b = agent.control_gain();
    let w = agent.curvature();
    let lin_utility = agent.utility_slope(0.0);
    let consumer = agent.is_consumer();

    // Objective coefficient on u(t) and on y(t) from payments.
    let kappa: Vec<f64> = problem
        .prices
        .iter()
        .map(|&p| agent.control_slope() + if consumer { -p } else { 0.0 })
        .collect();
    let hessian = DMatrix::from_diagonal_element(t_len, t_len, 2.0 * w);
    let mut linear = DVector::zeros(t_len);
    for t in 0..t_len {
        let pay = if consumer { 0.0 } else { problem.prices[t] };
        let next = if t + 1 < t_len { a * kappa[t + 1] / b } else { 0.0 };
        linear[t] = -(lin_utility + pay + kappa[t] / b - next);
    }

    let mut ineq = Vec::with_capacity(3 * t_len);
    for t in 0..t_len {
        let band = transition_band(agent, problem.disturbances[t]);
        let carry = if t == 0 { a * problem.x0 } else { 0.0 };
        let mut row = vec![0.0; t_len];
        row[t] = 1.0;
        if t > 0 {
            row[t - 1] = -a;
        }
        ineq.push((row.clone(), band.lo + carry));
        ineq.push((row.iter().map(|v| -v).collect(), -(band.hi + carry)));
        if let Some(floor) = agent.state_floor() {
            let mut r = vec![0.0; t_len];
            r[t] = 1.0;
            ineq.push((r, floor));
        }
    }
    let sol = QuadraticProgram::with_rows(hessian, linear, &[], &ineq).solve()?;
    let mut controls = Vec::with_capacity(t_len);
    let mut prev = problem.x0;
    for t in 0..t_len {
        let y = sol.x[t];
        controls.push((y - a * prev - agent.drift(problem.disturbances[t])) / b);
        prev = y;
    }
    Ok((controls, sol.iterations))
}
