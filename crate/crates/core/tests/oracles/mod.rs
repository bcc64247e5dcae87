//! Reference computations that share no solver code with the library.
//!
//! Agent dynamics and utilities are re-derived here from the parameter
//! structs. Shared by the integration tests of this crate and by the
//! acceptance suite of the command-line crate.

#![allow(dead_code)]

pub mod invariants;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use gridclear_core::{ConsumerParams, Disturbance, Population, SupplierParams};

pub fn consumer_next(c: &ConsumerParams, x: f64, u: f64, w: f64) -> f64 {
    c.a * x + c.h - c.beta * u + w
}

pub fn consumer_util(c: &ConsumerParams, x: f64) -> f64 {
    let mid = 0.5 * (c.phi_lo + c.phi_hi);
    -(x - mid) * (x - mid) + c.m
}

pub fn supplier_cost(s: &SupplierParams, x: f64, ramp: f64) -> f64 {
    s.c1 * x * x + s.c2 * x + s.c3 + s.c4 * ramp
}

/// Consumer objective with payments, by forward simulation.
pub fn consumer_objective(c: &ConsumerParams, x0: f64, prices: &[f64], u: &[f64]) -> f64 {
    let mut x = x0;
    let mut total = 0.0;
    for (t, &ut) in u.iter().enumerate() {
        x = consumer_next(c, x, ut, 0.0);
        total += consumer_util(c, x) - prices[t] * ut;
    }
    total
}

/// Supplier objective with payments, by forward simulation.
pub fn supplier_objective(s: &SupplierParams, x0: f64, prices: &[f64], u: &[f64]) -> f64 {
    let mut x = x0;
    let mut total = 0.0;
    for (t, &ut) in u.iter().enumerate() {
        x = s.a * x + ut;
        total += prices[t] * x - supplier_cost(s, x, ut);
    }
    total
}

/// Central finite differences of `f` at `u` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, u: &[f64], h: f64) -> Vec<f64> {
    let mut probe = u.to_vec();
    (0..u.len())
        .map(|i| {
            probe[i] = u[i] + h;
            let up = f(&probe);
            probe[i] = u[i] - h;
            let down = f(&probe);
            probe[i] = u[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Best consumer value over the grid `{0, step, 2 step, ...} ∩ [0, u_max]` for T = 2.
pub fn consumer_grid_search_t2(c: &ConsumerParams, x0: f64, prices: [f64; 2], step: f64) -> f64 {
    let umax = (c.h + c.c_max) / c.beta;
    let n = (umax / step).floor() as usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let u = [i as f64 * step, j as f64 * step];
            best = best.max(consumer_objective(c, x0, &prices, &u));
        }
    }
    best
}

/// Social welfare optimum of the deterministic joint problem with a known
/// disturbance sequence, solved centrally by an interior-point method.
/// Variables per agent: controls `u(1..T)` then post-decision states `y(1..T)`.
pub fn centralized_welfare(pop: &Population, x0: &[f64], disturbances: &[Disturbance]) -> f64 {
    let t_len = disturbances.len();
    let n_agents = pop.n();
    let m = pop.m();
    let nv = 2 * t_len * n_agents;
    let u_idx = |i: usize, t: usize| 2 * t_len * i + t;
    let y_idx = |i: usize, t: usize| 2 * t_len * i + t_len + t;

    let mut p_diag = vec![0.0; nv];
    let mut q = vec![0.0; nv];
    for (i, c) in pop.consumers.iter().enumerate() {
        let mid = 0.5 * (c.phi_lo + c.phi_hi);
        for t in 0..t_len {
            p_diag[y_idx(i, t)] = 2.0;
            q[y_idx(i, t)] = -2.0 * mid;
        }
    }
    for (j, s) in pop.suppliers.iter().enumerate() {
        let i = m + j;
        for t in 0..t_len {
            p_diag[y_idx(i, t)] = 2.0 * s.c1;
            q[y_idx(i, t)] = s.c2;
            q[u_idx(i, t)] = s.c4;
        }
    }

    let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut row = 0;
    let push = |r: usize, c: usize, v: f64, ri: &mut Vec<usize>, ci: &mut Vec<usize>, vals: &mut Vec<f64>| {
        ri.push(r);
        ci.push(c);
        vals.push(v);
    };
    // Dynamics: y(t) - a y(t-1) - gain u(t) = drift (+ a x0 at t = 0).
    for i in 0..n_agents {
        for t in 0..t_len {
            let d = disturbances[t];
            let (a, gain, drift) = if i < m {
                let c = &pop.consumers[i];
                (c.a, -c.beta, c.h + d.w)
            } else {
                (pop.suppliers[i - m].a, 1.0, d.v)
            };
            push(row, y_idx(i, t), 1.0, &mut ri, &mut ci, &mut vals);
            push(row, u_idx(i, t), -gain, &mut ri, &mut ci, &mut vals);
            if t > 0 {
                push(row, y_idx(i, t - 1), -a, &mut ri, &mut ci, &mut vals);
                b.push(drift);
            } else {
                b.push(drift + a * x0[i]);
            }
            row += 1;
        }
    }
    // Balance: production equals consumption.
    for t in 0..t_len {
        for i in 0..n_agents {
            if i < m {
                push(row, u_idx(i, t), -1.0, &mut ri, &mut ci, &mut vals);
            } else {
                push(row, y_idx(i, t), 1.0, &mut ri, &mut ci, &mut vals);
            }
        }
        b.push(0.0);
        row += 1;
    }
    let n_eq = row;
    // Bounds as A z <= b.
    for i in 0..n_agents {
        let (lo, hi) = if i < m {
            let c = &pop.consumers[i];
            (0.0, (c.h + c.c_max) / c.beta)
        } else {
            let s = &pop.suppliers[i - m];
            (-s.r_down.unwrap_or(s.r_max), s.r_max)
        };
        for t in 0..t_len {
            push(row, u_idx(i, t), 1.0, &mut ri, &mut ci, &mut vals);
            b.push(hi);
            row += 1;
            push(row, u_idx(i, t), -1.0, &mut ri, &mut ci, &mut vals);
            b.push(-lo);
            row += 1;
            if i >= m {
                push(row, y_idx(i, t), -1.0, &mut ri, &mut ci, &mut vals);
                b.push(0.0);
                row += 1;
            }
        }
    }
    let n_ineq = row - n_eq;

    let p = CscMatrix::new_from_triplets(nv, nv, (0..nv).collect(), (0..nv).collect(), p_diag);
    let a = CscMatrix::new_from_triplets(row, nv, ri, ci, vals);
    let cones = [SupportedConeT::ZeroConeT(n_eq), SupportedConeT::NonnegativeConeT(n_ineq)];
    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: 1e-11,
        tol_gap_rel: 1e-11,
        tol_feas: 1e-11,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).expect("valid problem data");
    solver.solve();
    assert!(
        matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved),
        "centralized oracle failed: {:?}",
        solver.solution.status
    );
    let z = &solver.solution.x;
    let mut welfare = 0.0;
    for (i, c) in pop.consumers.iter().enumerate() {
        for t in 0..t_len {
            welfare += consumer_util(c, z[y_idx(i, t)]);
        }
    }
    for (j, s) in pop.suppliers.iter().enumerate() {
        for t in 0..t_len {
            welfare -= supplier_cost(s, z[y_idx(m + j, t)], z[u_idx(m + j, t)]);
        }
    }
    welfare
}

/// Two-agent event tree with i.i.d. outcomes `(w_k, v_k)` of probability `p_k`.
pub struct PairTree<'a> {
    pub consumer: &'a ConsumerParams,
    pub supplier: &'a SupplierParams,
    pub x0: [f64; 2],
    pub outcomes: &'a [(f64, f64, f64)],
    pub horizon: usize,
}

impl PairTree<'_> {
    fn umax(&self) -> f64 {
        (self.consumer.h + self.consumer.c_max) / self.consumer.beta
    }

    /// Consumption interval keeping the supplier's ramp admissible when it
    /// produces exactly the consumption.
    fn interval(&self, prod_prev: f64, v: f64) -> (f64, f64) {
        let s = self.supplier;
        let base = s.a * prod_prev + v;
        let lo = (base - s.r_down.unwrap_or(s.r_max)).max(0.0);
        let hi = (base + s.r_max).min(self.umax());
        (lo, hi)
    }

    /// Stage welfare of a balanced period.
    fn stage(&self, temp_prev: f64, prod_prev: f64, c: f64, w: f64, v: f64) -> (f64, f64) {
        let x = consumer_next(self.consumer, temp_prev, c, w);
        let ramp = c - self.supplier.a * prod_prev - v;
        (consumer_util(self.consumer, x) - supplier_cost(self.supplier, c, ramp), x)
    }

    /// Best balanced last-period value: concave quadratic in the
    /// consumption, maximized in closed form on its interval.
    fn leaf(&self, temp_prev: f64, prod_prev: f64, w: f64, v: f64) -> f64 {
        let (lo, hi) = self.interval(prod_prev, v);
        if lo > hi {
            return f64::NEG_INFINITY;
        }
        let cp = self.consumer;
        let s = self.supplier;
        let mid = 0.5 * (cp.phi_lo + cp.phi_hi);
        let free = cp.a * temp_prev + cp.h + w - mid;
        let c = ((2.0 * cp.beta * free - s.c2 - s.c4) / (2.0 * cp.beta * cp.beta + 2.0 * s.c1)).clamp(lo, hi);
        self.stage(temp_prev, prod_prev, c, w, v).0
    }

    /// Number of decision nodes above the last period.
    fn inner_nodes(&self) -> usize {
        let k = self.outcomes.len();
        (1..self.horizon).map(|d| k.pow(d as u32)).sum()
    }

    /// Expected welfare of a balanced policy whose inner-node consumptions
    /// are `z` (breadth-first order), with optimal last-period decisions.
    pub fn value(&self, z: &[f64]) -> f64 {
        self.walk(z, 0, 0, self.x0[0], self.x0[1])
    }

    fn walk(&self, z: &[f64], depth: usize, index: usize, temp: f64, prod: f64) -> f64 {
        let k = self.outcomes.len();
        let mut total = 0.0;
        for (j, &(w, v, p)) in self.outcomes.iter().enumerate() {
            if depth + 1 == self.horizon {
                total += p * self.leaf(temp, prod, w, v);
                continue;
            }
            // Breadth-first position of this child among inner nodes.
            let offset: usize = (1..=depth).map(|d| k.pow(d as u32)).sum();
            let pos = offset + index * k + j;
            let c = z[pos];
            let (lo, hi) = self.interval(prod, v);
            if c < lo - 1e-12 || c > hi + 1e-12 {
                return f64::NEG_INFINITY;
            }
            let (stage, x) = self.stage(temp, prod, c, w, v);
            total += p * (stage + self.walk(z, depth + 1, index * k + j, x, c));
        }
        total
    }

    /// Maximum expected welfare over balanced joint policies: exhaustive
    /// search over a `points`-per-node grid of inner-node consumptions,
    /// re-centred and halved around the incumbent until the cells are tiny.
    pub fn best_balanced_welfare(&self, points: usize) -> f64 {
        let dim = self.inner_nodes();
        if dim == 0 {
            return self.value(&[]);
        }
        let umax = self.umax();
        let mut lo = vec![0.0; dim];
        let mut hi = vec![umax; dim];
        let mut best = f64::NEG_INFINITY;
        let mut best_z = vec![0.0; dim];
        let mut z = vec![0.0; dim];
        loop {
            let steps: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (h - l) / (points - 1) as f64).collect();
            let mut idx = vec![0usize; dim];
            loop {
                for d in 0..dim {
                    z[d] = lo[d] + idx[d] as f64 * steps[d];
                }
                let v = self.value(&z);
                if v > best {
                    best = v;
                    best_z.copy_from_slice(&z);
                }
                let mut d = 0;
                while d < dim {
                    idx[d] += 1;
                    if idx[d] < points {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
                if d == dim {
                    break;
                }
            }
            let width = steps.iter().cloned().fold(0.0, f64::max);
            if width < 1e-9 {
                return best;
            }
            for d in 0..dim {
                let half = 2.0 * steps[d];
                lo[d] = (best_z[d] - half).max(0.0);
                hi[d] = (best_z[d] + half).min(umax);
            }
        }
    }
}

/// Least-cost single-period dispatch by enumerating, for every supplier,
/// whether it sits at its lower bound, its upper bound, or strictly inside.
/// Returns `(cost, production)`, or `None` when no pattern is consistent.
pub fn dispatch_by_enumeration(suppliers: &[SupplierParams], prev: &[f64], v: f64, demand: f64) -> Option<(f64, Vec<f64>)> {
    let n = suppliers.len();
    let bounds: Vec<(f64, f64)> = suppliers
        .iter()
        .zip(prev)
        .map(|(s, &p)| {
            let base = s.a * p + v;
            ((base - s.r_down.unwrap_or(s.r_max)).max(0.0), base + s.r_max)
        })
        .collect();
    let cost = |x: &[f64]| -> f64 {
        x.iter()
            .zip(suppliers.iter().zip(prev))
            .map(|(&xi, (s, &p))| supplier_cost(s, xi, xi - s.a * p - v))
            .sum()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let pattern: Vec<usize> = (0..n).map(|i| (code / 3usize.pow(i as u32)) % 3).collect();
        let fixed: f64 = pattern
            .iter()
            .zip(&bounds)
            .map(|(&p, &(lo, hi))| match p {
                0 => lo,
                1 => hi,
                _ => 0.0,
            })
            .sum();
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 2).collect();
        let mut x: Vec<f64> = pattern
            .iter()
            .zip(&bounds)
            .map(|(&p, &(lo, hi))| if p == 0 { lo } else { hi })
            .collect();
        if free.is_empty() {
            if (fixed - demand).abs() > 1e-9 {
                continue;
            }
        } else {
            // Stationarity: 2 c1 x + c2 + c4 = lambda for every free supplier.
            let inv: f64 = free.iter().map(|&i| 1.0 / (2.0 * suppliers[i].c1)).sum();
            let offset: f64 = free
                .iter()
                .map(|&i| (suppliers[i].c2 + suppliers[i].c4) / (2.0 * suppliers[i].c1))
                .sum();
            let lambda = (demand - fixed + offset) / inv;
            let mut ok = true;
            for &i in &free {
                let s = &suppliers[i];
                x[i] = (lambda - s.c2 - s.c4) / (2.0 * s.c1);
                if x[i] < bounds[i].0 - 1e-12 || x[i] > bounds[i].1 + 1e-12 {
                    ok = false;
                }
            }
            if !ok {
                continue;
            }
        }
        let c = cost(&x);
        if best.as_ref().map_or(true, |(b, _)| c < *b) {
            best = Some((c, x));
        }
    }
    best
}
