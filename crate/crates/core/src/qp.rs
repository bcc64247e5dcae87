//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 z' G z + g' z
//!     subject to  a_i' z  = b_i,   i < meq
//!                 a_i' z >= b_i,   i >= meq
//! ```
//!
//! with the Goldfarb–Idnani dual active-set method. The active-set
//! quantities are recomputed from scratch every step (no factor updates),
//! which is cheap at the sizes used here (tens of variables) and keeps the
//! implementation short.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    /// Symmetric positive definite Hessian `G`.
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Constraint rows `a_i'`; the first `meq` rows are equalities.
    pub constraints: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub meq: usize,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

impl QuadraticProgram {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            constraints: DMatrix::zeros(0, n),
            rhs: DVector::zeros(0),
            meq: 0,
        }
    }

    /// Builds a program from row lists; `eq` rows come first.
    pub fn with_rows(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        eq: &[(Vec<f64>, f64)],
        ineq: &[(Vec<f64>, f64)],
    ) -> Self {
        let n = linear.len();
        let m = eq.len() + ineq.len();
        let mut constraints = DMatrix::zeros(m, n);
        let mut rhs = DVector::zeros(m);
        for (i, (row, b)) in eq.iter().chain(ineq.iter()).enumerate() {
            debug_assert_eq!(row.len(), n);
            for (j, v) in row.iter().enumerate() {
                constraints[(i, j)] = *v;
            }
            rhs[i] = *b;
        }
        Self {
            hessian,
            linear,
            constraints,
            rhs,
            meq: eq.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn solve(&self) -> Result<QpSolution> {
        solve(self)
    }
}

const ZERO_TOL: f64 = 1e-13;

/// Goldfarb–Idnani dual active-set method.
pub fn solve(qp: &QuadraticProgram) -> Result<QpSolution> {
    let n = qp.dim();
    let m = qp.constraints.nrows();
    if qp.hessian.nrows() != n || qp.hessian.ncols() != n || qp.constraints.ncols() != n {
        return Err(Error::InvalidInput("QP dimensions disagree".into()));
    }
    let chol = qp
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("QP Hessian is not positive definite".into()))?;
    let ginv = chol.inverse();

    // Unit-norm rows so that one tolerance fits every constraint.
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut norms = Vec::with_capacity(m);
    for i in 0..m {
        let row = qp.constraints.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            let ok = if i < qp.meq { qp.rhs[i] == 0.0 } else { qp.rhs[i] <= 0.0 };
            if !ok {
                return Err(Error::Infeasible(format!("constraint {i} has a zero row")));
            }
            rows.push(row);
            rhs.push(0.0);
            norms.push(0.0);
            continue;
        }
        rows.push(row / norm);
        rhs.push(qp.rhs[i] / norm);
        norms.push(norm);
    }

    let mut x = -(&ginv * &qp.linear);
    // Active constraints, their orientation (+1 or -1, equalities may flip) and multipliers.
    let mut active: Vec<usize> = Vec::new();
    let mut orient: Vec<f64> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut redundant = vec![false; m];
    let max_iters = 50 * (n + m + 1);
    let mut iterations = 0;

    let tol = |i: usize, x: &DVector<f64>| 1e-10 * (1.0 + rhs[i].abs() + x.amax());

    loop {
        // Equalities enter first, then the most violated inequality.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..qp.meq {
            if norms[i] > 0.0 && !redundant[i] && !active.contains(&i) {
                let s = rows[i].dot(&x) - rhs[i];
                pick = Some((i, if s > 0.0 { -1.0 } else { 1.0 }));
                break;
            }
        }
        if pick.is_none() {
            let mut worst = 0.0;
            for i in qp.meq..m {
                if norms[i] == 0.0 || active.contains(&i) {
                    continue;
                }
                let s = rows[i].dot(&x) - rhs[i];
                if s < -tol(i, &x) && s < worst {
                    worst = s;
                    pick = Some((i, 1.0));
                }
            }
        }
        let Some((p, sign)) = pick else { break };
        let np = &rows[p] * sign;
        let bp = rhs[p] * sign;
        let mut up = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iters {
                let residual = (np.dot(&x) - bp).abs();
                return Err(Error::NonConvergence {
                    iterations,
                    residual,
                });
            }
            let ginv_np = &ginv * &np;
            let (z, r) = if active.is_empty() {
                (ginv_np.clone(), DVector::zeros(0))
            } else {
                let q = active.len();
                let mut nmat = DMatrix::zeros(n, q);
                for (j, (&idx, &o)) in active.iter().zip(orient.iter()).enumerate() {
                    nmat.set_column(j, &(&rows[idx] * o));
                }
                let gn = &ginv * &nmat;
                let mmat = nmat.transpose() * &gn;
                let rhs_r = nmat.transpose() * &ginv_np;
                let r = match mmat.cholesky() {
                    Some(c) => c.solve(&rhs_r),
                    None => {
                        return Err(Error::InvalidInput(
                            "active constraints became linearly dependent".into(),
                        ))
                    }
                };
                let z = &ginv_np - gn * &r;
                (z, r)
            };

            let sp = np.dot(&x) - bp;
            let mut t1 = f64::INFINITY;
            let mut drop: Option<usize> = None;
            for (j, &idx) in active.iter().enumerate() {
                if idx >= qp.meq && r[j] > ZERO_TOL {
                    let ratio = mult[j] / r[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            let scale = np.dot(&ginv_np).max(f64::MIN_POSITIVE);
            let t2 = if zn <= 1e-12 * scale {
                f64::INFINITY
            } else {
                -sp / zn
            };

            if t1.is_infinite() && t2.is_infinite() {
                if p < qp.meq && sp.abs() <= tol(p, &x) {
                    redundant[p] = true;
                    break;
                }
                return Err(Error::Infeasible(format!(
                    "constraint {p} cannot be satisfied together with the active set"
                )));
            }
            if t2.is_infinite() {
                for (j, u) in mult.iter_mut().enumerate() {
                    *u -= t1 * r[j];
                }
                up += t1;
                let k = drop.expect("finite t1 has a blocking constraint");
                active.remove(k);
                orient.remove(k);
                mult.remove(k);
                continue;
            }
            let t = t1.min(t2);
            x += &z * t;
            for (j, u) in mult.iter_mut().enumerate() {
                *u -= t * r[j];
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                orient.push(sign);
                mult.push(up);
                break;
            }
            let k = drop.expect("finite t1 has a blocking constraint");
            active.remove(k);
            orient.remove(k);
            mult.remove(k);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for ((&idx, &o), &u) in active.iter().zip(orient.iter()).zip(mult.iter()) {
        multipliers[idx] = (o * u.max(if idx < qp.meq { f64::NEG_INFINITY } else { 0.0 }))
            / norms[idx];
    }
    let objective = qp.objective(&x);
    Ok(QpSolution {
        x,
        multipliers,
        active,
        objective,
        iterations,
    })
}
