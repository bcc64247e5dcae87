//! Structural checks run on randomly generated instances. Each check
//! returns a description of the first violation it finds.

use gridclear_core::stochastic::{children_sum_to_one, mpc_rollout, DisturbanceLaw, DEFAULT_NODE_CAP};
use gridclear_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

/// Feasibility slack for emitted trajectories.
pub const FEAS_TOL: f64 = 1e-9;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub struct Instance {
    pub population: Population,
    pub disturbances: Vec<Disturbance>,
    pub lambda0: PriceSchedule,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=3);
    let n = m + rng.gen_range(1..=3);
    let t = rng.gen_range(2..=6);
    let population = sample_population(m, n, rng.gen()).unwrap();
    let disturbances = (0..t)
        .map(|_| Disturbance {
            w: rng.gen_range(-0.3..0.3),
            v: rng.gen_range(-0.1..0.1),
        })
        .collect();
    let lambda0 = PriceSchedule::constant(t, rng.gen_range(0.5..2.0));
    Instance {
        population,
        disturbances,
        lambda0,
    }
}

/// Control and state bounds of one agent, from the raw parameters.
fn admissible(agent: &AgentSpec, u: f64, y: f64) -> bool {
    match agent {
        AgentSpec::Consumer(c) => u >= -FEAS_TOL && u <= (c.h + c.c_max) / c.beta + FEAS_TOL,
        AgentSpec::Supplier(s) => {
            u >= -s.r_down.unwrap_or(s.r_max) - FEAS_TOL && u <= s.r_max + FEAS_TOL && y >= -FEAS_TOL
        }
    }
}

fn next(agent: &AgentSpec, x: f64, u: f64, d: Disturbance) -> f64 {
    match agent {
        AgentSpec::Consumer(c) => c.a * x + c.h - c.beta * u + d.w,
        AgentSpec::Supplier(s) => s.a * x + u + d.v,
    }
}

pub fn deterministic(seed: u64) -> Check {
    let inst = instance(seed);
    let pop = &inst.population;
    let settings = ClearSettings {
        rule: StepRule::Constant { alpha0: 0.1 },
        tol_balance: 1e-4,
        max_iters: 20_000,
        ..ClearSettings::default()
    };
    let out = clear_market_with(pop, &pop.initial, &inst.lambda0, &inst.disturbances, &settings)
        .map_err(|e| format!("seed {seed}: {e}"))?;
    ensure(out.converged(), || format!("seed {seed}: no convergence"))?;
    let horizon = inst.disturbances.len();

    // Balance.
    for t in 0..horizon {
        let net: f64 = out.bids.iter().map(|b| b.injections[t]).sum();
        ensure((net - out.imbalance[t]).abs() < 1e-12, || format!("seed {seed}: reported imbalance differs at {t}"))?;
        ensure(net.abs() < settings.tol_balance, || format!("seed {seed}: residual {net} at {t}"))?;
    }

    // Payments cancel up to the residual, and account for the dual gap.
    let lambda = &out.prices.lambda;
    let paid: f64 = out
        .bids
        .iter()
        .map(|b| b.injections.iter().zip(lambda).map(|(i, p)| i * p).sum::<f64>())
        .sum();
    let bound: f64 = lambda.iter().map(|p| p.abs()).sum::<f64>() * settings.tol_balance;
    ensure(paid.abs() <= bound + 1e-12, || format!("seed {seed}: payments {paid} exceed {bound}"))?;
    ensure(
        (out.dual_value - out.social_welfare - paid).abs() < 1e-8 * (1.0 + out.dual_value.abs()),
        || format!("seed {seed}: dual value is not welfare plus payments"),
    )?;

    // Feasibility and consistency of every emitted trajectory.
    for (i, agent) in pop.agents().iter().enumerate() {
        let x = &out.states[i];
        ensure(x[0] == pop.initial[i], || format!("seed {seed}: agent {i} moved its start"))?;
        for t in 0..horizon {
            let u = out.bids[i].controls[t];
            let y = next(agent, x[t], u, inst.disturbances[t]);
            ensure((y - x[t + 1]).abs() < 1e-9, || format!("seed {seed}: agent {i} dynamics break at {t}"))?;
            ensure(admissible(agent, u, y), || format!("seed {seed}: agent {i} infeasible at {t}"))?;
            let inj = if agent.is_consumer() { -u } else { y };
            ensure((inj - out.bids[i].injections[t]).abs() < 1e-12, || format!("seed {seed}: agent {i} injection at {t}"))?;
        }
    }
    Ok(())
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> DisturbanceSpec {
    let k = rng.gen_range(1..=3);
    let outcomes = (0..k)
        .map(|_| Disturbance {
            w: rng.gen_range(-0.5..0.5),
            v: rng.gen_range(-0.1..0.1),
        })
        .collect();
    let row = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / s).collect::<Vec<f64>>()
    };
    let law = if rng.gen_bool(0.5) {
        DisturbanceLaw::Iid { probs: row(rng) }
    } else {
        DisturbanceLaw::Markov {
            initial_state: rng.gen_range(0..k),
            transition: (0..k).map(|_| row(rng)).collect(),
        }
    };
    DisturbanceSpec { outcomes, law }
}

pub fn tree_normalization(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng);
    let horizon = rng.gen_range(1..=4);
    let tree = build_tree(&spec, horizon, DEFAULT_NODE_CAP).map_err(|e| e.to_string())?;
    ensure(children_sum_to_one(&tree), || format!("seed {seed}: children do not sum to one"))?;
    let leaves: f64 = tree.leaves().map(|n| n.probability).sum();
    ensure((leaves - 1.0).abs() < 1e-12, || format!("seed {seed}: leaves sum to {leaves}"))?;
    for n in tree.nodes.iter().skip(1) {
        let parent = &tree.nodes[n.parent.unwrap()];
        ensure(n.depth == parent.depth + 1, || format!("seed {seed}: depth of node {}", n.id))?;
        ensure((n.probability - parent.probability * n.conditional).abs() < 1e-15, || {
            format!("seed {seed}: node {} is not parent times conditional", n.id)
        })?;
    }
    for t in 0..=horizon {
        let level: f64 = tree.nodes.iter().filter(|n| n.depth == t).map(|n| n.probability).sum();
        ensure((level - 1.0).abs() < 1e-12, || format!("seed {seed}: depth {t} sums to {level}"))?;
    }
    Ok(())
}

/// Tree policies: each node starts where its parent ended, every node
/// control is admissible, and a node's decision is unchanged by prices
/// of nodes that are neither its ancestors nor its descendants.
pub fn tree_policy(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng);
    let horizon = rng.gen_range(1..=3);
    let tree = build_tree(&spec, horizon, DEFAULT_NODE_CAP).map_err(|e| e.to_string())?;
    let pop = sample_population(1, 2, rng.gen()).map_err(|e| e.to_string())?;
    let prices: Vec<f64> = (0..tree.len()).map(|_| rng.gen_range(0.0..2.5)).collect();
    let prices = PricePolicy::new(&tree, prices).map_err(|e| e.to_string())?;
    for (agent, &x0) in pop.agents().iter().zip(&pop.initial) {
        let resp = tree_best_response(agent, x0, &prices, &tree, &TreeSolver::Exact).map_err(|e| format!("seed {seed}: {e}"))?;
        let p = &resp.policy;
        for n in tree.nodes.iter().skip(1) {
            let parent = n.parent.unwrap();
            let start = if parent == 0 { x0 } else { p.next_states[parent] };
            ensure(p.states[n.id] == start, || format!("seed {seed}: node {} does not start at its parent", n.id))?;
            let y = next(agent, start, p.controls[n.id], tree.disturbance(n.id));
            ensure((y - p.next_states[n.id]).abs() < 1e-9, || format!("seed {seed}: node {} dynamics", n.id))?;
            ensure(admissible(agent, p.controls[n.id], y), || format!("seed {seed}: node {} infeasible", n.id))?;
        }

        // Perturb prices in a sibling subtree of some depth-1 node.
        let first = &tree.nodes[0].children;
        if first.len() < 2 {
            continue;
        }
        let moved = first[1];
        let mut bumped = prices.clone();
        for n in &tree.nodes {
            if tree.path(n.id).first() == Some(&moved) {
                bumped.prices[n.id] += 1.0;
            }
        }
        let again = tree_best_response(agent, x0, &bumped, &tree, &TreeSolver::Exact).map_err(|e| e.to_string())?;
        for n in &tree.nodes {
            if tree.path(n.id).first() == Some(&first[0]) {
                ensure((again.policy.controls[n.id] - p.controls[n.id]).abs() < 1e-9, || {
                    format!("seed {seed}: node {} reacts to prices on another branch", n.id)
                })?;
            }
        }
    }
    Ok(())
}

/// Look-ahead decisions up to period `s` depend only on outcomes up to `s`.
pub fn mpc_measurability(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pop = sample_population(1, rng.gen_range(2..=3), rng.gen()).map_err(|e| e.to_string())?;
    let spec = DisturbanceSpec::symmetric(rng.gen_range(0.1..0.5), rng.gen_range(0.0..0.1));
    let horizon = rng.gen_range(3..=5);
    let k = rng.gen_range(1..=horizon);
    let split = rng.gen_range(1..horizon);
    let a: Vec<usize> = (0..horizon).map(|_| rng.gen_range(0..spec.len())).collect();
    let mut b = a.clone();
    for j in b.iter_mut().skip(split) {
        *j = (*j + 1) % spec.len();
    }
    let lambda0 = PriceSchedule::constant(horizon, 1.0);
    let settings = ClearSettings {
        rule: StepRule::Constant { alpha0: 0.2 },
        tol_balance: 1e-4,
        max_iters: 5000,
        ..ClearSettings::default()
    };
    let ra = mpc_rollout(&pop, &pop.initial, &spec, &a, &lambda0, k, &settings).map_err(|e| e.to_string())?;
    let rb = mpc_rollout(&pop, &pop.initial, &spec, &b, &lambda0, k, &settings).map_err(|e| e.to_string())?;
    for t in 0..split {
        ensure(ra.prices[t] == rb.prices[t], || format!("seed {seed}: price at {t} sees the future"))?;
        for i in 0..pop.n() {
            ensure(ra.controls[i][t] == rb.controls[i][t], || format!("seed {seed}: control at {t} sees the future"))?;
        }
    }
    for (i, agent) in pop.agents().iter().enumerate() {
        for t in 0..horizon {
            let y = next(agent, ra.states[i][t], ra.controls[i][t], ra.disturbances[t]);
            ensure(admissible(agent, ra.controls[i][t], y), || {
                format!("seed {seed}: look-ahead control of agent {i} infeasible at {t}")
            })?;
        }
    }
    Ok(())
}

/// Balanced stochastic clearing on a small tree: every node balances and
/// expected payments vanish up to the residual.
pub fn stochastic_balance(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pop = sample_population(1, 2, rng.gen()).map_err(|e| e.to_string())?;
    let spec = DisturbanceSpec::symmetric(rng.gen_range(0.1..0.5), 0.0);
    let tree = build_tree(&spec, rng.gen_range(1..=3), DEFAULT_NODE_CAP).map_err(|e| e.to_string())?;
    let settings = ClearSettings {
        rule: StepRule::Constant { alpha0: 1.0 },
        tol_balance: 1e-5,
        max_iters: 5000,
        ..ClearSettings::default()
    };
    let out = stochastic_clear(&pop, &pop.initial, &tree, &PricePolicy::constant(&tree, 1.0), &settings, &TreeSolver::Exact)
        .map_err(|e| format!("seed {seed}: {e}"))?;
    ensure(out.converged(), || format!("seed {seed}: stochastic clear did not converge"))?;
    let mut paid = 0.0;
    for n in tree.nodes.iter().skip(1) {
        let net: f64 = out.policies.iter().map(|p| p.injections[n.id]).sum();
        ensure(net.abs() < settings.tol_balance, || format!("seed {seed}: node {} residual {net}", n.id))?;
        paid += n.probability * out.prices.prices[n.id] * net;
    }
    ensure(paid.abs() < 1e-4, || format!("seed {seed}: expected payments {paid}"))
}
