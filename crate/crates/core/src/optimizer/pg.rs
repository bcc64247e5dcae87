//! Projected gradient ascent on the controls with Barzilai–Borwein steps and
//! Armijo backtracking along the projection arc.

use nalgebra::{DMatrix, DVector};

use super::{AgentProblem, SolverSettings};
use crate::error::{Error, Result};
use crate::qp::QuadraticProgram;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;
const MAX_STEP: f64 = 1e8;

/// Euclidean projection onto the agent's admissible control set.
///
/// For consumers (and suppliers whose clamped ramps keep production
/// nonnegative) this is a clamp. Otherwise the nonnegativity rows couple the
/// periods and the projection is solved as a small QP.
pub fn project(problem: &AgentProblem, z: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = problem.agent.control_box();
    let clamped: Vec<f64> = z.iter().map(|v| v.clamp(lo, hi)).collect();
    let Some(floor) = problem.agent.state_floor() else {
        return Ok(clamped);
    };
    let states = problem.simulate(&clamped);
    if states[1..].iter().all(|&x| x >= floor) {
        return Ok(clamped);
    }

    let n = z.len();
    let a = problem.agent.retention();
    let b = problem.agent.control_gain();
    let mut ineq = Vec::with_capacity(3 * n);
    for t in 0..n {
        let mut up = vec![0.0; n];
        up[t] = -1.0;
        ineq.push((up, -hi));
        let mut down = vec![0.0; n];
        down[t] = 1.0;
        ineq.push((down, lo));
    }
    // x(t+1) = a^(t+1) x0 + sum_{s<=t} a^(t-s) (b u_s + drift_s) >= floor
    for t in 0..n {
        let mut row = vec![0.0; n];
        let mut constant = a.powi(t as i32 + 1) * problem.x0;
        for s in 0..=t {
            let gain = a.powi((t - s) as i32);
            row[s] = gain * b;
            constant += gain * problem.agent.drift(problem.disturbances[s]);
        }
        ineq.push((row, floor - constant));
    }
    let qp = QuadraticProgram::with_rows(
        DMatrix::identity(n, n),
        -DVector::from_row_slice(z),
        &[],
        &ineq,
    );
    Ok(qp.solve()?.x.iter().copied().collect())
}

fn residual(problem: &AgentProblem, u: &[f64], g: &[f64]) -> Result<f64> {
    let probe: Vec<f64> = u.iter().zip(g).map(|(a, b)| a + b).collect();
    let p = project(problem, &probe)?;
    Ok(p.iter()
        .zip(u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Maximizes the agent objective from `start` (or the box midpoint).
/// Returns the controls and the iteration count.
pub fn solve(
    problem: &AgentProblem,
    start: Option<&[f64]>,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, usize)> {
    let n = problem.horizon();
    let (lo, hi) = problem.agent.control_box();
    let init: Vec<f64> = match start {
        Some(s) => s.to_vec(),
        None => vec![0.5 * (lo + hi); n],
    };
    let mut u = project(problem, &init)?;
    let mut f = problem.objective(&u);
    let mut g = problem.gradient(&u);
    let mut step = 1.0;
    let mut res = residual(problem, &u, &g)?;

    for k in 0..settings.max_iters {
        if res < settings.tol_opt {
            return Ok((u, k));
        }
        let mut trial = step;
        let (cand, fc) = loop {
            let probe: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a + trial * b).collect();
            let cand = project(problem, &probe)?;
            let ascent: f64 = cand.iter().zip(&u).zip(&g).map(|((c, x), gi)| gi * (c - x)).sum();
            let fc = problem.objective(&cand);
            // Near the optimum the Armijo gain drops below the rounding of f.
            let slack = 4.0 * f64::EPSILON * (1.0 + f.abs());
            if fc >= f + ARMIJO * ascent - slack || trial < MIN_STEP {
                break (cand, fc);
            }
            trial *= 0.5;
        };
        let gc = problem.gradient(&cand);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = cand[i] - u[i];
            ss += s * s;
            sy -= s * (gc[i] - g[i]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(MIN_STEP, MAX_STEP) } else { MAX_STEP.min(trial * 2.0) };
        let stalled = ss == 0.0;
        u = cand;
        f = fc;
        g = gc;
        res = residual(problem, &u, &g)?;
        if stalled && res >= settings.tol_opt {
            return Err(Error::NonConvergence {
                iterations: k + 1,
                residual: res,
            });
        }
    }
    if res < settings.tol_opt {
        return Ok((u, settings.max_iters));
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iters,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentSpec, ConsumerParams, Disturbance, SupplierParams};

    #[test]
    fn projection_of_feasible_point_is_identity() {
        let agent = AgentSpec::Supplier(SupplierParams {
            a: 1.0,
            r_max: 1.0,
            r_down: None,
            c1: 1.0,
            c2: 0.1,
            c3: 0.5,
            c4: 0.2,
        });
        let prices = [0.0; 3];
        let dist = [Disturbance::ZERO; 3];
        let p = AgentProblem::new(&agent, 0.5, &prices, &dist).unwrap();
        let u = [0.2, -0.3, 0.1];
        assert_eq!(project(&p, &u).unwrap(), u.to_vec());
        // Driving production below zero forces the coupled projection.
        let q = project(&p, &[-1.0, -1.0, 0.0]).unwrap();
        let states = p.simulate(&q);
        assert!(states.iter().all(|&x| x >= -1e-12));
        assert!(q.iter().all(|&v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn reports_non_convergence() {
        let agent = AgentSpec::Consumer(ConsumerParams {
            a: 1.0,
            h: 1.0,
            beta: 1.0,
            c_max: 2.0,
            phi_lo: 20.0,
            phi_hi: 25.0,
            m: 2.0,
        });
        let prices = [0.5; 8];
        let dist = [Disturbance::ZERO; 8];
        let p = AgentProblem::new(&agent, 26.0, &prices, &dist).unwrap();
        let settings = SolverSettings {
            max_iters: 1,
            tol_opt: 1e-14,
            ..Default::default()
        };
        assert!(matches!(
            solve(&p, None, &settings),
            Err(Error::NonConvergence { .. })
        ));
    }
}
