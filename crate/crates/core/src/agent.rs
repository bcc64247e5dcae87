//! Agent dynamics, admissible controls and stage utilities.
//!
//! Two agent classes share the grid. Consumers are thermal loads whose
//! temperature follows `x' = a x + h - beta u + w`, where `u >= 0` is the
//! cooling energy bought in the period. Suppliers are generators whose
//! production level follows `x' = a x + u + v`, where `u` is the ramp.
//!
//! Period timing: the common disturbance of period `t` is observed before the
//! period-`t` decision, the decision moves the state from `x(t)` to `x(t+1)`,
//! and the period is scored on the post-decision state `x(t+1)`. A consumer
//! injects `-u(t)` into the grid, a supplier injects the production level
//! `x(t+1)` it ramped to.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when checking box constraints on computed controls.
pub const FEASIBILITY_TOL: f64 = 1e-9;

fn slack(bound: f64) -> f64 {
    FEASIBILITY_TOL * bound.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerParams {
    /// Thermal retention coefficient.
    pub a: f64,
    /// Ambient heating per period (°C).
    pub h: f64,
    /// Cooling effectiveness (°C per unit energy).
    pub beta: f64,
    /// Maximal cooling rate (°C per period).
    pub c_max: f64,
    pub phi_lo: f64,
    pub phi_hi: f64,
    /// Constant utility offset.
    pub m: f64,
}

impl ConsumerParams {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.phi_lo + self.phi_hi)
    }

    /// Largest admissible consumption, `(h + c_max) / beta`.
    pub fn max_consumption(&self) -> f64 {
        (self.h + self.c_max) / self.beta
    }

    pub fn next_state(&self, x: f64, consumption: f64, w: f64) -> f64 {
        self.a * x + self.h - self.beta * consumption + w
    }

    /// Comfort utility `-(x - midpoint)^2 + m`. Payments are accounted separately.
    pub fn utility(&self, x: f64) -> f64 {
        let d = x - self.midpoint();
        -d * d + self.m
    }

    /// Consumption that drives the next state exactly to the comfort midpoint.
    pub fn setpoint_consumption(&self, x: f64, w: f64) -> f64 {
        (self.a * x + self.h + w - self.midpoint()) / self.beta
    }

    /// Physical sanity violations, empty when the parameters are usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let finite = [self.a, self.h, self.beta, self.c_max, self.phi_lo, self.phi_hi, self.m];
        if finite.iter().any(|v| !v.is_finite()) {
            out.push("consumer parameters must be finite".to_string());
        }
        if !(self.beta > 0.0) {
            out.push(format!("cooling effectiveness beta = {} must be positive", self.beta));
        }
        if !(self.c_max >= 0.0) {
            out.push(format!("maximal cooling rate c_max = {} must be nonnegative", self.c_max));
        }
        if !(self.h >= 0.0) {
            out.push(format!("ambient heating h = {} must be nonnegative", self.h));
        }
        if !(self.phi_lo < self.phi_hi) {
            out.push(format!(
                "empty comfort band: phi_lo = {} is not below phi_hi = {}",
                self.phi_lo, self.phi_hi
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplierParams {
    /// Production retention coefficient.
    pub a: f64,
    /// Maximal upward ramp per period.
    pub r_max: f64,
    /// Maximal downward ramp; `None` means symmetric (`r_max`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_down: Option<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Linear cost on the ramp control.
    pub c4: f64,
}

impl SupplierParams {
    pub fn ramp_down(&self) -> f64 {
        self.r_down.unwrap_or(self.r_max)
    }

    pub fn next_state(&self, x: f64, ramp: f64, v: f64) -> f64 {
        self.a * x + ramp + v
    }

    /// Stage cost `c1 x^2 + c2 x + c3 + c4 ramp`.
    pub fn cost(&self, x: f64, ramp: f64) -> f64 {
        self.c1 * x * x + self.c2 * x + self.c3 + self.c4 * ramp
    }

    /// Admissible ramp interval from production `x`: the ramp box intersected
    /// with nonnegativity of the next production level.
    pub fn ramp_bounds(&self, x: f64, v: f64) -> (f64, f64) {
        let lo = (-self.ramp_down()).max(-(self.a * x + v));
        (lo, self.r_max)
    }

    pub fn marginal_cost(&self, x: f64) -> f64 {
        2.0 * self.c1 * x + self.c2 + self.c4
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let finite = [self.a, self.r_max, self.c1, self.c2, self.c3, self.c4];
        if finite.iter().any(|v| !v.is_finite()) {
            out.push("supplier parameters must be finite".to_string());
        }
        if !(self.r_max > 0.0) {
            out.push(format!("ramp limit r_max = {} must be positive", self.r_max));
        }
        if let Some(d) = self.r_down {
            if !(d >= 0.0) {
                out.push(format!("downward ramp limit r_down = {d} must be nonnegative"));
            }
        }
        if !(self.c1 > 0.0) {
            out.push(format!(
                "non-strict concavity: quadratic cost c1 = {} must be positive",
                self.c1
            ));
        }
        out
    }
}

/// One period's realization of the common disturbance: `w` enters every
/// consumer's temperature, `v` every supplier's production.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub w: f64,
    pub v: f64,
}

impl Disturbance {
    pub const ZERO: Disturbance = Disturbance { w: 0.0, v: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub t: usize,
}

impl AgentState {
    pub fn new(x: f64, t: usize) -> Self {
        Self { x, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AgentSpec {
    Consumer(ConsumerParams),
    Supplier(SupplierParams),
}

impl AgentSpec {
    pub fn is_consumer(&self) -> bool {
        matches!(self, AgentSpec::Consumer(_))
    }

    pub fn retention(&self) -> f64 {
        match self {
            AgentSpec::Consumer(p) => p.a,
            AgentSpec::Supplier(p) => p.a,
        }
    }

    /// Coefficient of the control in the state transition.
    pub fn control_gain(&self) -> f64 {
        match self {
            AgentSpec::Consumer(p) => -p.beta,
            AgentSpec::Supplier(_) => 1.0,
        }
    }

    /// Constant part of the transition for the given disturbance.
    pub fn drift(&self, d: Disturbance) -> f64 {
        match self {
            AgentSpec::Consumer(p) => p.h + d.w,
            AgentSpec::Supplier(_) => d.v,
        }
    }

    pub fn transition(&self, x: f64, u: f64, d: Disturbance) -> f64 {
        match self {
            AgentSpec::Consumer(p) => p.next_state(x, u, d.w),
            AgentSpec::Supplier(p) => p.next_state(x, u, d.v),
        }
    }

    /// Admissible control interval from pre-decision state `x`.
    pub fn control_bounds(&self, x: f64, d: Disturbance) -> (f64, f64) {
        match self {
            AgentSpec::Consumer(p) => (0.0, p.max_consumption()),
            AgentSpec::Supplier(p) => p.ramp_bounds(x, d.v),
        }
    }

    /// State-independent control box (the supplier's nonnegativity is a state
    /// constraint and is not part of it).
    pub fn control_box(&self) -> (f64, f64) {
        match self {
            AgentSpec::Consumer(p) => (0.0, p.max_consumption()),
            AgentSpec::Supplier(p) => (-p.ramp_down(), p.r_max),
        }
    }

    /// Lower bound on the state, if any.
    pub fn state_floor(&self) -> Option<f64> {
        match self {
            AgentSpec::Consumer(_) => None,
            AgentSpec::Supplier(_) => Some(0.0),
        }
    }

    /// Grid-side injection of the period: `-consumption` or the new production level.
    pub fn injection(&self, u: f64, x_next: f64) -> f64 {
        match self {
            AgentSpec::Consumer(_) => -u,
            AgentSpec::Supplier(_) => x_next,
        }
    }

    /// Stage utility scored on the post-decision state, without payments.
    pub fn stage_utility(&self, x_next: f64, u: f64) -> f64 {
        match self {
            AgentSpec::Consumer(p) => p.utility(x_next),
            AgentSpec::Supplier(p) => -p.cost(x_next, u),
        }
    }

    /// Curvature weight `w` of the stage utility `-w x^2 + ...` in the post-decision state.
    pub fn curvature(&self) -> f64 {
        match self {
            AgentSpec::Consumer(_) => 1.0,
            AgentSpec::Supplier(p) => p.c1,
        }
    }

    /// Derivative of the stage utility with respect to the post-decision state.
    pub fn utility_slope(&self, x_next: f64) -> f64 {
        match self {
            AgentSpec::Consumer(p) => -2.0 * (x_next - p.midpoint()),
            AgentSpec::Supplier(p) => -(2.0 * p.c1 * x_next + p.c2),
        }
    }

    /// Derivative of the stage utility with respect to the control at fixed state.
    pub fn control_slope(&self) -> f64 {
        match self {
            AgentSpec::Consumer(_) => 0.0,
            AgentSpec::Supplier(p) => -p.c4,
        }
    }

    /// Checked transition: errors when `u` is not admissible from `x`.
    pub fn step(&self, x: f64, u: f64, d: Disturbance) -> Result<f64> {
        let (lo, hi) = self.control_box();
        if !u.is_finite() || u < lo - slack(lo) || u > hi + slack(hi) {
            return Err(Error::ConstraintViolation(format!(
                "control {u} outside [{lo}, {hi}]"
            )));
        }
        let next = self.transition(x, u, d);
        if let Some(floor) = self.state_floor() {
            if next < floor - slack(floor) {
                return Err(Error::ConstraintViolation(format!(
                    "next state {next} below floor {floor}"
                )));
            }
        }
        Ok(next)
    }

    pub fn violations(&self) -> Vec<String> {
        match self {
            AgentSpec::Consumer(p) => p.violations(),
            AgentSpec::Supplier(p) => p.violations(),
        }
    }
}

pub fn consumer_step(
    state: AgentState,
    consumption: f64,
    params: &ConsumerParams,
    w: f64,
) -> Result<AgentState> {
    let x = AgentSpec::Consumer(*params).step(state.x, consumption, Disturbance { w, v: 0.0 })?;
    Ok(AgentState::new(x, state.t + 1))
}

pub fn supplier_step(
    state: AgentState,
    ramp: f64,
    params: &SupplierParams,
    v: f64,
) -> Result<AgentState> {
    let x = AgentSpec::Supplier(*params).step(state.x, ramp, Disturbance { w: 0.0, v })?;
    Ok(AgentState::new(x, state.t + 1))
}

pub fn consumer_stage_utility(state: AgentState, params: &ConsumerParams) -> f64 {
    params.utility(state.x)
}

pub fn supplier_stage_cost(state: AgentState, ramp: f64, params: &SupplierParams) -> f64 {
    params.cost(state.x, ramp)
}

/// Consumers occupy indices `0..m`, suppliers `m..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub consumers: Vec<ConsumerParams>,
    pub suppliers: Vec<SupplierParams>,
    /// Initial state per agent, in agent order.
    pub initial: Vec<f64>,
}

impl Population {
    pub fn new(
        consumers: Vec<ConsumerParams>,
        suppliers: Vec<SupplierParams>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let pop = Self {
            consumers,
            suppliers,
            initial,
        };
        let v = pop.violations();
        if v.is_empty() {
            Ok(pop)
        } else {
            Err(Error::InvalidInput(v.join("; ")))
        }
    }

    pub fn m(&self) -> usize {
        self.consumers.len()
    }

    pub fn n(&self) -> usize {
        self.consumers.len() + self.suppliers.len()
    }

    pub fn agents(&self) -> Vec<AgentSpec> {
        self.consumers
            .iter()
            .map(|c| AgentSpec::Consumer(*c))
            .chain(self.suppliers.iter().map(|s| AgentSpec::Supplier(*s)))
            .collect()
    }

    /// Same population with every retention coefficient replaced by `a`.
    pub fn with_retention(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.consumers.iter_mut().for_each(|c| c.a = a);
        out.suppliers.iter_mut().for_each(|s| s.a = a);
        out
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.consumers.is_empty() || self.suppliers.is_empty() {
            out.push(format!(
                "population needs at least one consumer and one supplier (m = {}, n = {})",
                self.m(),
                self.n()
            ));
        }
        if self.initial.len() != self.n() {
            out.push(format!(
                "{} initial states given for {} agents",
                self.initial.len(),
                self.n()
            ));
        }
        for (i, agent) in self.agents().iter().enumerate() {
            for v in agent.violations() {
                out.push(format!("agent {i}: {v}"));
            }
            if let (Some(x), Some(floor)) = (self.initial.get(i), agent.state_floor()) {
                if *x < floor {
                    out.push(format!("agent {i}: initial production {x} is negative"));
                }
            }
        }
        out
    }
}

/// Parameter values and sampling intervals for random populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSpec {
    pub a: f64,
    pub h: f64,
    pub beta: f64,
    pub c_max: f64,
    pub m: f64,
    pub phi_lo: [f64; 2],
    pub phi_hi: [f64; 2],
    pub r_max: [f64; 2],
    pub c1: [f64; 2],
    pub c2: [f64; 2],
    pub c3: [f64; 2],
    pub c4: [f64; 2],
    pub consumer_initial: ConsumerStart,
    /// Initial production level of every supplier.
    pub supplier_initial: f64,
}

/// Initial temperature of sampled consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsumerStart {
    /// The comfort midpoint, where the thermostat is stationary.
    Midpoint,
    /// Uniform on the consumer's own comfort band.
    #[default]
    Band,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            a: 1.0,
            h: 1.0,
            beta: 1.0,
            c_max: 2.0,
            m: 2.0,
            phi_lo: [20.0, 21.0],
            phi_hi: [24.0, 25.0],
            r_max: [0.5, 1.5],
            c1: [0.9, 1.1],
            c2: [0.1, 0.3],
            c3: [0.5, 1.0],
            c4: [0.1, 0.5],
            consumer_initial: ConsumerStart::Band,
            supplier_initial: 1.0,
        }
    }
}

impl SamplingSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let ranges = [
            ("phi_lo", self.phi_lo),
            ("phi_hi", self.phi_hi),
            ("r_max", self.r_max),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                out.push(format!("range {name} = [{lo}, {hi}] is not an interval"));
            }
        }
        if !(self.phi_lo[1] < self.phi_hi[0]) {
            out.push(format!(
                "empty comfort band: phi_lo range {:?} overlaps phi_hi range {:?}",
                self.phi_lo, self.phi_hi
            ));
        }
        if !(self.c1[0] > 0.0) {
            out.push(format!(
                "non-strict concavity: c1 range {:?} must be strictly positive",
                self.c1
            ));
        }
        if !(self.r_max[0] > 0.0) {
            out.push(format!("r_max range {:?} must be strictly positive", self.r_max));
        }
        if !(self.beta > 0.0) {
            out.push(format!("cooling effectiveness beta = {} must be positive", self.beta));
        }
        if !(self.c_max >= 0.0) {
            out.push(format!("maximal cooling rate c_max = {} must be nonnegative", self.c_max));
        }
        if !(self.h >= 0.0) {
            out.push(format!("ambient heating h = {} must be nonnegative", self.h));
        }
        if !(self.supplier_initial >= 0.0) {
            out.push(format!(
                "supplier_initial = {} must be nonnegative",
                self.supplier_initial
            ));
        }
        out
    }
}

/// Samples a population with the default parameter intervals.
pub fn sample_population(m: usize, n: usize, seed: u64) -> Result<Population> {
    sample_population_with(m, n, seed, &SamplingSpec::default())
}

/// Draws consumer comfort bounds and supplier ramp/cost coefficients uniformly
/// from their intervals with a ChaCha8 stream seeded by `seed`. Draw order:
/// every consumer's `(phi_lo, phi_hi)` followed by its initial temperature
/// when that is sampled, then every supplier's `(r_max, c1, c2, c3, c4)`.
pub fn sample_population_with(
    m: usize,
    n: usize,
    seed: u64,
    spec: &SamplingSpec,
) -> Result<Population> {
    if m == 0 || n <= m {
        return Err(Error::InvalidCounts { m, n });
    }
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::InvalidInput(v.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |[lo, hi]: [f64; 2]| Uniform::new_inclusive(lo, hi).sample(&mut rng);

    let mut initial = Vec::with_capacity(n);
    let consumers: Vec<ConsumerParams> = (0..m)
        .map(|_| {
            let c = ConsumerParams {
                a: spec.a,
                h: spec.h,
                beta: spec.beta,
                c_max: spec.c_max,
                phi_lo: draw(spec.phi_lo),
                phi_hi: draw(spec.phi_hi),
                m: spec.m,
            };
            initial.push(match spec.consumer_initial {
                ConsumerStart::Midpoint => c.midpoint(),
                ConsumerStart::Band => draw([c.phi_lo, c.phi_hi]),
            });
            c
        })
        .collect();
    let suppliers: Vec<SupplierParams> = (m..n)
        .map(|_| SupplierParams {
            a: spec.a,
            r_max: draw(spec.r_max),
            r_down: None,
            c1: draw(spec.c1),
            c2: draw(spec.c2),
            c3: draw(spec.c3),
            c4: draw(spec.c4),
        })
        .collect();
    initial.extend(std::iter::repeat(spec.supplier_initial).take(n - m));
    Ok(Population {
        consumers,
        suppliers,
        initial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consumer(a: f64) -> ConsumerParams {
        ConsumerParams {
            a,
            h: 1.0,
            beta: 1.0,
            c_max: 100.0,
            phi_lo: 20.0,
            phi_hi: 25.0,
            m: 2.0,
        }
    }

    fn supplier() -> SupplierParams {
        SupplierParams {
            a: 1.0,
            r_max: 1.0,
            r_down: None,
            c1: 1.0,
            c2: 0.2,
            c3: 0.5,
            c4: 0.1,
        }
    }

    #[test]
    fn consumer_step_examples() {
        let s = AgentState::new(22.0, 0);
        assert_eq!(consumer_step(s, 1.0, &consumer(1.0), 0.0).unwrap().x, 22.0);
        let s = AgentState::new(20.0, 0);
        let next = consumer_step(s, 0.0, &consumer(1.0), 0.0).unwrap();
        assert_eq!((next.x, next.t), (21.0, 1));
        // 3 * 22 + 1 - 45 + 0.5
        let s = AgentState::new(22.0, 0);
        assert!((consumer_step(s, 45.0, &consumer(3.0), 0.5).unwrap().x - 22.5).abs() < 1e-12);
    }

    #[test]
    fn consumer_step_rejects_out_of_band_consumption() {
        let p = consumer(1.0);
        let s = AgentState::new(22.0, 0);
        assert!(matches!(
            consumer_step(s, -0.1, &p, 0.0),
            Err(Error::ConstraintViolation(_))
        ));
        assert!(consumer_step(s, p.max_consumption() + 0.01, &p, 0.0).is_err());
        assert!(consumer_step(s, p.max_consumption(), &p, 0.0).is_ok());
    }

    #[test]
    fn supplier_step_examples() {
        let p = supplier();
        let s = AgentState::new(1.0, 0);
        assert_eq!(supplier_step(s, 0.0, &p, 0.0).unwrap().x, 1.0);
        assert_eq!(supplier_step(s, 0.5, &p, 0.0).unwrap().x, 1.5);
        assert!((supplier_step(s, 0.5, &p, -0.2).unwrap().x - 1.3).abs() < 1e-12);
    }

    #[test]
    fn supplier_step_enforces_ramp_and_nonnegativity() {
        let p = supplier();
        let s = AgentState::new(1.0, 0);
        assert!(supplier_step(s, 1.5, &p, 0.0).is_err());
        assert!(supplier_step(s, -1.5, &p, 0.0).is_err());
        let low = AgentState::new(0.2, 0);
        assert!(supplier_step(low, -0.5, &p, 0.0).is_err());
        assert_eq!(supplier_step(low, -0.2, &p, 0.0).unwrap().x, 0.0);
    }

    #[test]
    fn asymmetric_ramp_limit() {
        let p = SupplierParams {
            r_down: Some(0.25),
            ..supplier()
        };
        let s = AgentState::new(1.0, 0);
        assert!(supplier_step(s, -0.3, &p, 0.0).is_err());
        assert!(supplier_step(s, 0.9, &p, 0.0).is_ok());
    }

    #[test]
    fn stage_utility_examples() {
        let mut p = consumer(1.0);
        assert_eq!(consumer_stage_utility(AgentState::new(22.5, 1), &p), 2.0);
        assert_eq!(consumer_stage_utility(AgentState::new(21.5, 1), &p), 1.0);
        p.m = 0.0;
        assert_eq!(consumer_stage_utility(AgentState::new(24.5, 1), &p), -4.0);
    }

    #[test]
    fn stage_cost_examples() {
        let base = SupplierParams {
            c1: 0.0,
            c2: 0.0,
            c3: 0.5,
            c4: 0.0,
            ..supplier()
        };
        assert_eq!(supplier_stage_cost(AgentState::new(0.0, 1), 0.0, &base), 0.5);
        let quad = SupplierParams {
            c1: 1.0,
            c3: 0.0,
            ..base
        };
        assert_eq!(supplier_stage_cost(AgentState::new(1.0, 1), 0.0, &quad), 1.0);
        let full = SupplierParams {
            c1: 1.0,
            c2: 0.2,
            c3: 0.5,
            c4: 0.1,
            ..base
        };
        // 1 + 0.2 + 0.5 + 0.1
        assert!((supplier_stage_cost(AgentState::new(1.0, 1), 1.0, &full) - 1.8).abs() < 1e-12);
    }

    #[test]
    fn setpoint_control_is_a_fixed_point() {
        for &a in &[0.5, 1.0, 3.0] {
            let p = consumer(a);
            for &x in &[18.0, 22.5, 30.0] {
                let u = (p.a * x + p.h - x) / p.beta;
                assert_eq!(p.next_state(x, u, 0.0), x);
            }
        }
    }

    #[test]
    fn sampling_counts_and_determinism() {
        let pop = sample_population(5, 10, 42).unwrap();
        assert_eq!((pop.m(), pop.n(), pop.initial.len()), (5, 10, 10));
        assert_eq!(pop, sample_population(5, 10, 42).unwrap());
        assert_ne!(pop, sample_population(5, 10, 43).unwrap());
        let tiny = sample_population(1, 2, 0).unwrap();
        assert_eq!((tiny.consumers.len(), tiny.suppliers.len()), (1, 1));
        assert!(tiny.violations().is_empty());
    }

    #[test]
    fn sampling_rejects_bad_counts() {
        assert_eq!(
            sample_population(0, 3, 1),
            Err(Error::InvalidCounts { m: 0, n: 3 })
        );
        assert!(sample_population(3, 3, 1).is_err());
    }

    #[test]
    fn sampled_parameters_stay_in_their_intervals() {
        let spec = SamplingSpec::default();
        let within = |v: f64, [lo, hi]: [f64; 2]| lo <= v && v <= hi;
        for seed in 0..1000 {
            let pop = sample_population(2, 4, seed).unwrap();
            for c in &pop.consumers {
                assert!(within(c.phi_lo, spec.phi_lo) && within(c.phi_hi, spec.phi_hi));
                assert_eq!((c.a, c.h, c.beta, c.m), (1.0, 1.0, 1.0, 2.0));
            }
            for s in &pop.suppliers {
                assert!(within(s.r_max, spec.r_max));
                assert!(within(s.c1, spec.c1) && within(s.c2, spec.c2));
                assert!(within(s.c3, spec.c3) && within(s.c4, spec.c4));
            }
        }
    }
}
