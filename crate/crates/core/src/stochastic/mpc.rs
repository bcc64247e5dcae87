//! k-step look-ahead clearing along a sampled disturbance path.
//!
//! At period `s` the coordinator clears a deterministic window of
//! `min(k, T - s)` periods. The window's first disturbance is the one just
//! observed; later periods use conditional means. Only the first period of
//! the window is applied, the state advances, and the next window is warm
//! started from the shifted prices. Agents ignore everything past the
//! window end.
//!
//! When a window ends where the previous one did and the observed
//! disturbance equals the one that window assumed, the previous plan is
//! still the solution of the remaining problem (the tail of a welfare
//! optimum is optimal for the tail) and is reused instead of re-cleared.

use std::io::Write;

use super::tree::DisturbanceSpec;
use crate::agent::{Disturbance, Population};
use crate::error::{Error, Result};
use crate::market::{clear_market_with, ClearSettings, IterateRecord, MarketOutcome, MarketStatus};
use crate::optimizer::PriceSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub start: usize,
    pub len: usize,
    pub iterations: usize,
    pub status: MarketStatus,
    pub reused: bool,
    pub iterate_log: Vec<IterateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutcome {
    pub path: Vec<usize>,
    pub disturbances: Vec<Disturbance>,
    /// Price applied in each period.
    pub prices: Vec<f64>,
    /// Per agent, the applied controls.
    pub controls: Vec<Vec<f64>>,
    pub injections: Vec<Vec<f64>>,
    /// Per agent `x(0..T)`.
    pub states: Vec<Vec<f64>>,
    /// Realized aggregate injection per period.
    pub imbalance: Vec<f64>,
    /// Realized total stage utility.
    pub welfare: f64,
    pub windows: Vec<WindowRecord>,
}

impl MpcOutcome {
    pub fn all_converged(&self) -> bool {
        self.windows.iter().all(|w| w.status == MarketStatus::Converged)
    }

    /// Writes `window,iteration,t,lambda,imbalance,dual_value` with `t` in absolute periods.
    pub fn write_iterate_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "window,iteration,t,lambda,imbalance,dual_value")?;
        for w in &self.windows {
            for rec in &w.iterate_log {
                for (j, (p, i)) in rec.prices.iter().zip(&rec.imbalance).enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        w.start + 1,
                        rec.iteration,
                        w.start + j + 1,
                        p,
                        i,
                        rec.dual_value
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Samples a path from `seed` and rolls the look-ahead scheme along it.
pub fn mpc_clear(
    population: &Population,
    x0: &[f64],
    spec: &DisturbanceSpec,
    lambda0: &PriceSchedule,
    k: usize,
    settings: &ClearSettings,
    seed: u64,
) -> Result<MpcOutcome> {
    let path = spec.sample_path(lambda0.horizon(), seed);
    mpc_rollout(population, x0, spec, &path, lambda0, k, settings)
}

/// Look-ahead rollout along a given outcome path; `lambda0` spans the full
/// horizon and seeds the first window.
pub fn mpc_rollout(
    population: &Population,
    x0: &[f64],
    spec: &DisturbanceSpec,
    path: &[usize],
    lambda0: &PriceSchedule,
    k: usize,
    settings: &ClearSettings,
) -> Result<MpcOutcome> {
    let horizon = lambda0.horizon();
    if k == 0 || k > horizon {
        return Err(Error::InvalidInput(format!(
            "lookahead {k} must lie in 1..={horizon}"
        )));
    }
    if path.len() != horizon {
        return Err(Error::HorizonMismatch {
            expected: horizon,
            found: path.len(),
        });
    }
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::InvalidInput(v.join("; ")));
    }
    if let Some(&j) = path.iter().find(|&&j| j >= spec.len()) {
        return Err(Error::InvalidInput(format!("outcome index {j} out of range")));
    }
    let agents = population.agents();
    let n = agents.len();
    let realized = spec.realize(path);

    let mut states: Vec<Vec<f64>> = x0.iter().map(|&x| vec![x]).collect();
    let mut controls = vec![Vec::with_capacity(horizon); n];
    let mut injections = vec![Vec::with_capacity(horizon); n];
    let mut prices = Vec::with_capacity(horizon);
    let mut imbalance = Vec::with_capacity(horizon);
    let mut windows = Vec::with_capacity(horizon);

    // Previous window: its outcome, start, and assumed disturbances.
    let mut prev: Option<(MarketOutcome, usize, Vec<Disturbance>)> = None;
    for s in 0..horizon {
        let len = k.min(horizon - s);
        let mut window_dist = Vec::with_capacity(len);
        window_dist.push(realized[s]);
        for j in 1..len {
            window_dist.push(spec.forecast(Some(path[s]), j));
        }

        let reuse = match &prev {
            Some((_, start, dist)) => start + dist.len() == s + len && dist[s - start] == realized[s],
            None => false,
        };
        if !reuse {
            let warm = match &prev {
                None => PriceSchedule {
                    lambda: lambda0.lambda[..len].to_vec(),
                },
                Some((out, start, _)) => {
                    let old = &out.prices.lambda;
                    let last = *old.last().expect("nonempty window");
                    PriceSchedule {
                        lambda: (0..len).map(|j| *old.get(s - start + j).unwrap_or(&last)).collect(),
                    }
                }
            };
            let x_now: Vec<f64> = states.iter().map(|x| *x.last().expect("initial state")).collect();
            let out = clear_market_with(population, &x_now, &warm, &window_dist, settings)?;
            prev = Some((out, s, window_dist));
        }
        let (out, start, _) = prev.as_ref().expect("window solved");
        let off = s - start;
        windows.push(WindowRecord {
            start: s,
            len,
            iterations: if reuse { 0 } else { out.iterations },
            status: out.status,
            reused: reuse,
            iterate_log: if reuse { Vec::new() } else { out.iterate_log.clone() },
        });
        prices.push(out.prices.lambda[off]);
        imbalance.push(out.imbalance[off]);
        for i in 0..n {
            controls[i].push(out.bids[i].controls[off]);
            injections[i].push(out.bids[i].injections[off]);
            states[i].push(out.states[i][off + 1]);
        }
    }

    let welfare = agents
        .iter()
        .zip(controls.iter().zip(&states))
        .map(|(a, (u, x))| {
            u.iter()
                .zip(&x[1..])
                .map(|(&u, &x)| a.stage_utility(x, u))
                .sum::<f64>()
        })
        .sum();
    Ok(MpcOutcome {
        path: path.to_vec(),
        disturbances: realized,
        prices,
        controls,
        injections,
        states,
        imbalance,
        welfare,
        windows,
    })
}
