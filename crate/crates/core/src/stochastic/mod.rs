//! Clearing under a commonly observed random disturbance.
//!
//! Prices become policies on the event tree of the disturbance, agents answer
//! with control policies, and the price iteration runs node by node. The
//! k-step look-ahead approximation in [`mpc`] avoids the tree altogether by
//! re-clearing deterministic windows along one sampled path.

mod clear;
pub mod mpc;
pub mod tree;

pub use clear::{expected_welfare, stochastic_clear, PricePolicy, StochasticIterate, StochasticOutcome};
pub use mpc::{mpc_clear, mpc_rollout, MpcOutcome, WindowRecord};
pub use tree::{build_tree, children_sum_to_one, DisturbanceLaw, DisturbanceSpec, Node, ScenarioTree, DEFAULT_NODE_CAP};
