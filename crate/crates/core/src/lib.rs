//! Decentralized market clearing for dynamic consumers and suppliers.
//!
//! A coordinator announces prices, price-taking agents answer with their
//! optimal energy schedules, and prices move against the imbalance until
//! supply meets demand in every period. The crate covers the deterministic
//! case, commonly observed randomness on scenario trees, a look-ahead
//! approximation along sampled paths, and a myopic dispatch baseline.

pub mod agent;
pub mod baseline;
pub mod error;
pub mod market;
pub mod metrics;
pub mod optimizer;
pub mod qp;
pub mod stochastic;

pub use agent::{
    sample_population, sample_population_with, AgentSpec, AgentState, ConsumerParams, ConsumerStart, Disturbance, Population,
    SamplingSpec, SupplierParams,
};
pub use baseline::{baseline_rollout, greedy_dispatch, thermostat_demand, BaselineOutcome, BaselineSettings, DispatchResult};
pub use error::{Error, Result};
pub use market::{
    clear_market, clear_market_with, demand_response_norm, imbalance, price_update, ClearSettings, IterateRecord,
    MarketOutcome, MarketStatus, StepRule,
};
pub use metrics::{price_variance, total_utility, Scenario, Scheme, SweepParam};
pub use optimizer::{
    best_response, best_response_with, objective_gradient, tree_best_response, BestResponse, ControlPolicy,
    ControlTrajectory, PriceSchedule, SolverKind, SolverSettings, TreeSolver,
};
pub use stochastic::{
    build_tree, expected_welfare, mpc_clear, stochastic_clear, DisturbanceSpec, PricePolicy, ScenarioTree,
};
