use thiserror::Error;

/// Errors produced by the market, optimizer and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("invalid agent counts: m = {m}, n = {n} (need m >= 1 and n > m)")]
    InvalidCounts { m: usize, n: usize },

    #[error("solver did not converge after {iterations} iterations (stationarity residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("state {state} left the value grid [{lo}, {hi}] at depth {depth}")]
    GridResolution {
        state: f64,
        lo: f64,
        hi: f64,
        depth: usize,
    },

    #[error("horizon mismatch: expected {expected}, found {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("scenario tree would have {nodes} nodes, above the cap of {cap}")]
    ExplosionGuard { nodes: usize, cap: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("series too short: length {len}, need at least 2")]
    TooShort { len: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
